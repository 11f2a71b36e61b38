#include "prf/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include "prf/error.hpp"

namespace prf {
namespace {

const std::unordered_map<std::string, int> kNoJudgments;

// Run entries of each query ordered by rank, then score descending, then doc
// id, so that evaluation ignores the line order of the run file.
std::map<std::string, std::vector<const RunEntry*>> ranked_lists(const RunList& run) {
  std::map<std::string, std::vector<const RunEntry*>> lists;
  for (const auto& e : run.entries) lists[e.query_id].push_back(&e);
  for (auto& [qid, list] : lists) {
    std::sort(list.begin(), list.end(), [](const RunEntry* a, const RunEntry* b) {
      if (a->rank != b->rank) return a->rank < b->rank;
      if (a->score != b->score) return a->score > b->score;
      return a->doc_id < b->doc_id;
    });
  }
  return lists;
}

void finish(MetricReport& report) {
  double sum = 0.0;
  for (const auto& [qid, v] : report.per_query) sum += v;
  report.mean = report.per_query.empty() ? 0.0 : sum / static_cast<double>(report.per_query.size());
}

void check_cutoff(int k) {
  if (k < 1) throw InputError("metric cutoff must be >= 1");
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) cols.push_back(line.substr(start, i - start));
  }
  return cols;
}

}  // namespace

void Qrels::add(const std::string& query_id, const std::string& doc_id, int grade) {
  if (grade < 0 || grade > kMaxGrade) {
    throw InputError("grade out of range: " + std::to_string(grade));
  }
  auto& judged = judgments_[query_id];
  const auto [it, inserted] = judged.emplace(doc_id, grade);
  if (!inserted && it->second != grade) {
    throw InputError("conflicting grades for " + query_id + " " + doc_id);
  }
  max_grade_ = std::max(max_grade_, grade);
}

int Qrels::grade(const std::string& query_id, const std::string& doc_id) const {
  const auto q = judgments_.find(query_id);
  if (q == judgments_.end()) return 0;
  const auto d = q->second.find(doc_id);
  return d == q->second.end() ? 0 : d->second;
}

bool Qrels::has_query(const std::string& query_id) const {
  return judgments_.find(query_id) != judgments_.end();
}

const std::unordered_map<std::string, int>& Qrels::judgments(const std::string& query_id) const {
  const auto q = judgments_.find(query_id);
  return q == judgments_.end() ? kNoJudgments : q->second;
}

std::vector<std::string> Qrels::query_ids() const {
  std::vector<std::string> ids;
  ids.reserve(judgments_.size());
  for (const auto& [qid, j] : judgments_) ids.push_back(qid);
  return ids;
}

Qrels Qrels::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("no such file: " + path.string());
  Qrels qrels;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto cols = split_ws(line);
    if (cols.empty()) continue;
    int grade = 0;
    const bool ok = cols.size() == 4 &&
                    std::from_chars(cols[3].data(), cols[3].data() + cols[3].size(), grade).ec ==
                        std::errc() ;
    if (!ok) throw InputError("malformed qrels line " + std::to_string(line_no));
    if (grade < 0 || grade > kMaxGrade) {
      throw InputError("grade out of range at qrels line " + std::to_string(line_no));
    }
    qrels.add(std::string(cols[0]), std::string(cols[2]), grade);
  }
  return qrels;
}

void Qrels::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& [qid, judged] : judgments_) {
    std::vector<std::pair<std::string, int>> sorted(judged.begin(), judged.end());
    std::sort(sorted.begin(), sorted.end());
    for (const auto& [doc, g] : sorted) out << qid << " 0 " << doc << ' ' << g << '\n';
  }
}

MetricReport mrr_at_k(const RunList& run, const Qrels& qrels, int k, int rel_threshold) {
  check_cutoff(k);
  MetricReport report{"MRR", k, rel_threshold, {}, 0.0};
  for (const auto& [qid, list] : ranked_lists(run)) {
    if (!qrels.has_query(qid)) continue;
    double rr = 0.0;
    const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), list.size());
    for (std::size_t i = 0; i < depth; ++i) {
      if (qrels.grade(qid, list[i]->doc_id) >= rel_threshold) {
        rr = 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
    report.per_query[qid] = rr;
  }
  finish(report);
  return report;
}

MetricReport ndcg_at_k(const RunList& run, const Qrels& qrels, int k, GainKind gain) {
  check_cutoff(k);
  const auto gain_of = [gain](int g) {
    return gain == GainKind::Linear ? static_cast<double>(g) : std::exp2(g) - 1.0;
  };
  MetricReport report{"nDCG", k, 0, {}, 0.0};
  for (const auto& [qid, list] : ranked_lists(run)) {
    if (!qrels.has_query(qid)) continue;
    std::vector<int> grades;
    for (const auto& [doc, g] : qrels.judgments(qid)) grades.push_back(g);
    std::sort(grades.begin(), grades.end(), std::greater<>());
    double ideal = 0.0;
    for (std::size_t i = 0; i < grades.size() && i < static_cast<std::size_t>(k); ++i) {
      ideal += gain_of(grades[i]) / std::log2(static_cast<double>(i) + 2.0);
    }
    if (ideal <= 0.0) continue;
    double dcg = 0.0;
    const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), list.size());
    for (std::size_t i = 0; i < depth; ++i) {
      dcg += gain_of(qrels.grade(qid, list[i]->doc_id)) / std::log2(static_cast<double>(i) + 2.0);
    }
    report.per_query[qid] = dcg / ideal;
  }
  finish(report);
  return report;
}

MetricReport recall_at_k(const RunList& run, const Qrels& qrels, int k, int binarize_threshold) {
  check_cutoff(k);
  if (binarize_threshold < 1 || binarize_threshold > Qrels::kMaxGrade) {
    throw InputError("recall threshold must be in [1, 3]");
  }
  MetricReport report{"Recall", k, binarize_threshold, {}, 0.0};
  for (const auto& [qid, list] : ranked_lists(run)) {
    if (!qrels.has_query(qid)) continue;
    std::size_t relevant = 0;
    for (const auto& [doc, g] : qrels.judgments(qid)) relevant += g >= binarize_threshold ? 1 : 0;
    if (relevant == 0) continue;
    std::size_t hits = 0;
    const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), list.size());
    for (std::size_t i = 0; i < depth; ++i) {
      hits += qrels.grade(qid, list[i]->doc_id) >= binarize_threshold ? 1 : 0;
    }
    report.per_query[qid] = static_cast<double>(hits) / static_cast<double>(relevant);
  }
  finish(report);
  return report;
}

int default_recall_threshold(const Qrels& qrels) noexcept {
  return qrels.max_grade() > 1 ? 2 : 1;
}

namespace {

// Continued fraction for the incomplete beta function (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw Error("incomplete beta did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw InputError("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw InputError("degrees of freedom must be positive");
  if (!std::isfinite(t)) return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

TTestResult paired_t_test(const std::map<std::string, double>& a,
                          const std::map<std::string, double>& b) {
  std::vector<double> diffs;
  for (const auto& [qid, va] : a) {
    const auto it = b.find(qid);
    if (it != b.end()) diffs.push_back(va - it->second);
  }
  const auto n = static_cast<int>(diffs.size());
  if (n < 2) throw Error("degenerate t-test");
  const auto [lo, hi] = std::minmax_element(diffs.begin(), diffs.end());
  if (*lo == *hi) throw Error("degenerate t-test");

  double mean = 0.0;
  for (double d : diffs) mean += d;
  mean /= n;
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / (n - 1));
  TTestResult r;
  r.n = n;
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_two_sided_p(r.t, n - 1);
  return r;
}

}  // namespace prf

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prf/run.hpp"

namespace prf {

/// Graded judgments in [0, 3].
class Qrels {
 public:
  static constexpr int kMaxGrade = 3;

  /// Throws prf::InputError "grade out of range" or on a conflicting repeat.
  void add(const std::string& query_id, const std::string& doc_id, int grade);

  /// Grade of the pair, 0 when unjudged.
  int grade(const std::string& query_id, const std::string& doc_id) const;
  bool has_query(const std::string& query_id) const;
  /// All judgments of a query (empty when none).
  const std::unordered_map<std::string, int>& judgments(const std::string& query_id) const;
  std::vector<std::string> query_ids() const;
  int max_grade() const noexcept { return max_grade_; }

  /// "qid 0 docid grade" per line.
  static Qrels load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::unordered_map<std::string, int>> judgments_;
  int max_grade_ = 0;
};

struct MetricReport {
  std::string metric_name;
  int cutoff = 0;
  int binarization_threshold = 0;  // relevance threshold actually applied; 0 for nDCG
  std::map<std::string, double> per_query;
  double mean = 0.0;
};

enum class GainKind { Linear, Exponential };

/// Queries evaluated are those present in both the run and the qrels.
/// Within a query, entries are ordered by rank (ties by score descending, then
/// doc id), so line order in the run file does not matter.
MetricReport mrr_at_k(const RunList& run, const Qrels& qrels, int k,
                      int rel_threshold = 1);

/// Queries whose ideal DCG is zero are excluded.
MetricReport ndcg_at_k(const RunList& run, const Qrels& qrels, int k,
                       GainKind gain = GainKind::Linear);

/// Queries without any judgment >= threshold are excluded.
MetricReport recall_at_k(const RunList& run, const Qrels& qrels, int k,
                         int binarize_threshold);

/// 2 for graded judgments, 1 for binary ones.
int default_recall_threshold(const Qrels& qrels) noexcept;

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // two-sided
  int n = 0;
};

/// Paired t-test over the queries shared by both maps. Throws prf::Error
/// "degenerate t-test" when n < 2 or all differences are identical.
TTestResult paired_t_test(const std::map<std::string, double>& per_query_a,
                          const std::map<std::string, double>& per_query_b);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

}  // namespace prf

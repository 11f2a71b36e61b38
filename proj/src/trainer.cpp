#include "prf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>

#include "prf/error.hpp"
#include "prf/util.hpp"

namespace prf {
namespace {

std::vector<std::span<const double>> tensor_views(const EncoderParams& p) {
  std::vector<std::span<const double>> views;
  p.for_each_tensor(
      [&](const std::string&, const Matrix& m, TensorRole) { views.push_back(m.values()); });
  return views;
}

void accumulate(EncoderParams& dst, const EncoderParams& src) {
  const auto views = tensor_views(src);
  std::size_t t = 0;
  dst.for_each_tensor([&](const std::string&, Matrix& m, TensorRole) {
    auto d = m.values();
    const auto s = views[t++];
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  });
}

void scale(EncoderParams& p, double factor) {
  p.for_each_tensor([&](const std::string&, Matrix& m, TensorRole) {
    for (double& v : m.values()) v *= factor;
  });
}

std::map<std::string, std::vector<SearchResult>> results_by_query(const RunList& run) {
  std::map<std::string, std::vector<SearchResult>> out;
  for (const auto& e : run.entries) out[e.query_id].push_back({e.doc_id, e.score, e.rank});
  for (auto& [qid, list] : out) {
    std::sort(list.begin(), list.end(), [](const SearchResult& a, const SearchResult& b) {
      if (a.rank != b.rank) return a.rank < b.rank;
      if (a.score != b.score) return a.score > b.score;
      return a.doc_id < b.doc_id;
    });
  }
  return out;
}

std::uint64_t negative_seed(std::uint64_t root, const std::string& query_id, int epoch) {
  return derive_seed(root, "negatives/" + query_id, static_cast<std::uint64_t>(epoch));
}

template <typename T>
T json_value(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InputError(std::string("train config field '") + key + "' has the wrong type");
  }
}

}  // namespace

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adamw") return OptimizerKind::AdamW;
  if (name == "lamb") return OptimizerKind::Lamb;
  throw InputError("unknown optimizer: " + std::string(name));
}

std::string_view to_string(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::AdamW ? "adamw" : "lamb";
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InputError("learning_rate must be finite and >= 0");
  }
  const std::pair<const char*, int> counts[] = {
      {"batch_size", batch_size},
      {"grad_accum_steps", grad_accum_steps},
      {"epochs", epochs},
      {"negatives_per_query", negatives_per_query},
      {"negative_pool_depth", negative_pool_depth}};
  for (const auto& [name, value] : counts) {
    if (value < 1) throw InputError(std::string(name) + " must be >= 1");
  }
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("train config must be a JSON object");
  static const std::set<std::string> kKnown = {
      "optimizer", "learning_rate", "batch_size", "grad_accum_steps", "epochs",
      "negatives_per_query", "negative_pool_depth", "in_batch_negatives", "head_policy", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (!kKnown.contains(key)) throw InputError("unknown train config field '" + key + "'");
  }
  TrainConfig c;
  c.optimizer = parse_optimizer_kind(json_value<std::string>(j, "optimizer", "adamw"));
  c.learning_rate = json_value(j, "learning_rate", c.learning_rate);
  c.batch_size = json_value(j, "batch_size", c.batch_size);
  c.grad_accum_steps = json_value(j, "grad_accum_steps", c.grad_accum_steps);
  c.epochs = json_value(j, "epochs", c.epochs);
  c.negatives_per_query = json_value(j, "negatives_per_query", c.negatives_per_query);
  c.negative_pool_depth = json_value(j, "negative_pool_depth", c.negative_pool_depth);
  c.in_batch_negatives = json_value(j, "in_batch_negatives", c.in_batch_negatives);
  c.head_policy = parse_head_policy(json_value<std::string>(j, "head_policy", "inherit"));
  c.seed = json_value(j, "seed", c.seed);
  c.validate();
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"optimizer", std::string(to_string(optimizer))},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"grad_accum_steps", grad_accum_steps},
          {"epochs", epochs},
          {"negatives_per_query", negatives_per_query},
          {"negative_pool_depth", negative_pool_depth},
          {"in_batch_negatives", in_batch_negatives},
          {"head_policy", std::string(to_string(head_policy))},
          {"seed", seed}};
}

OptimizerState OptimizerState::for_params(const EncoderParams& params) {
  OptimizerState s;
  params.for_each_tensor([&](const std::string&, const Matrix& m, TensorRole) {
    s.first_moment.emplace_back(m.size(), 0.0);
    s.second_moment.emplace_back(m.size(), 0.0);
  });
  return s;
}

void optimizer_step(OptimizerState& state, EncoderParams& params, const EncoderParams& grads,
                    OptimizerKind kind, double learning_rate) {
  const auto g = tensor_views(grads);
  if (g.size() != state.first_moment.size() || g.size() != state.second_moment.size()) {
    throw InputError("optimizer state does not match the parameters");
  }
  for (const auto& t : g) {
    for (double v : t) {
      if (!std::isfinite(v)) throw Error("non-finite gradient");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);

  std::size_t idx = 0;
  std::vector<double> update;
  params.for_each_tensor([&](const std::string& name, Matrix& m, TensorRole role) {
    auto w = m.values();
    const auto gi = g[idx];
    auto& m1 = state.first_moment[idx];
    auto& m2 = state.second_moment[idx];
    ++idx;
    if (gi.size() != w.size() || m1.size() != w.size()) {
      throw InputError("shape mismatch in optimizer step for " + name);
    }
    const double decay = role == TensorRole::kWeight ? state.weight_decay : 0.0;
    update.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m1[i] = state.beta1 * m1[i] + (1.0 - state.beta1) * gi[i];
      m2[i] = state.beta2 * m2[i] + (1.0 - state.beta2) * gi[i] * gi[i];
      const double mhat = m1[i] / bc1;
      const double vhat = m2[i] / bc2;
      update[i] = mhat / (std::sqrt(vhat) + state.epsilon) + decay * w[i];
    }
    double ratio = 1.0;
    if (kind == OptimizerKind::Lamb) {
      double wn = 0.0, un = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        wn += w[i] * w[i];
        un += update[i] * update[i];
      }
      wn = std::sqrt(wn);
      un = std::sqrt(un);
      if (wn > 0.0 && un > 0.0) ratio = std::clamp(wn / un, 0.0, 10.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * ratio * update[i];
  });
}

std::vector<std::string> sample_negatives(const RunList& run, const Qrels& qrels,
                                          const std::string& query_id, int pool_depth, int n,
                                          std::uint64_t seed) {
  if (pool_depth < 1 || n < 1) throw InputError("pool depth and sample size must be >= 1");
  std::vector<const RunEntry*> ranked;
  for (const auto& e : run.entries) {
    if (e.query_id == query_id) ranked.push_back(&e);
  }
  if (ranked.empty()) throw InputError("query not in run: " + query_id);
  if (static_cast<std::size_t>(pool_depth) > ranked.size()) {
    throw InputError("negative pool depth " + std::to_string(pool_depth) +
                     " exceeds run depth for query " + query_id);
  }
  std::sort(ranked.begin(), ranked.end(), [](const RunEntry* a, const RunEntry* b) {
    if (a->rank != b->rank) return a->rank < b->rank;
    if (a->score != b->score) return a->score > b->score;
    return a->doc_id < b->doc_id;
  });
  std::vector<std::string> eligible;
  for (int i = 0; i < pool_depth; ++i) {
    if (qrels.grade(query_id, ranked[i]->doc_id) < 1) eligible.push_back(ranked[i]->doc_id);
  }
  if (eligible.size() < static_cast<std::size_t>(n)) throw Error("insufficient negatives");
  std::vector<std::string> picked;
  picked.reserve(static_cast<std::size_t>(n));
  std::mt19937_64 rng(seed);
  std::sample(eligible.begin(), eligible.end(), std::back_inserter(picked), n, rng);
  std::sort(picked.begin(), picked.end());
  return picked;
}

TrainResult train(std::vector<TrainingExample> data, const EncoderParams& base,
                  const VectorIndex& doc_index, const TrainConfig& cfg,
                  const EpochHook& before_epoch) {
  cfg.validate();
  if (data.empty()) throw InputError("no training examples");
  const std::uint64_t index_checksum = doc_index.checksum();

  TrainResult result;
  result.params = init_prf_encoder(base, cfg.head_policy, derive_seed(cfg.seed, "head"));
  OptimizerState state = OptimizerState::for_params(result.params);

  LossConfig loss_cfg;
  loss_cfg.doc_side = DocSide::Frozen;
  loss_cfg.doc_embedding = [&doc_index](const std::string& id) { return doc_index.vector(id); };
  loss_cfg.in_batch_negatives = cfg.in_batch_negatives;

  const std::size_t n = data.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (before_epoch) before_epoch(epoch, data);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    std::size_t pos = 0;
    while (pos < n) {
      EncoderParams accumulated = EncoderParams::zeros(result.params.config);
      int micro = 0;
      double loss_sum = 0.0;
      while (micro < cfg.grad_accum_steps && pos < n) {
        std::vector<TrainingExample> mb;
        for (std::size_t i = pos; i < std::min(n, pos + batch); ++i) mb.push_back(data[order[i]]);
        pos += mb.size();
        const GradResult g = grad(result.params, mb, loss_cfg);
        accumulate(accumulated, g.gradients);
        loss_sum += g.loss;
        for (double l : g.example_losses) epoch_loss += l;
        ++micro;
      }
      if (micro > 1) scale(accumulated, 1.0 / micro);
      optimizer_step(state, result.params, accumulated, cfg.optimizer, cfg.learning_rate);
      ++step;
      result.log.push_back({step, epoch, loss_sum / micro, cfg.learning_rate});
    }
    result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  if (doc_index.checksum() != index_checksum) throw Error("document index changed during training");
  return result;
}

EpochHook resample_negatives_each_epoch(const RunList& run, const Qrels& qrels,
                                        const TrainConfig& cfg) {
  auto shared_run = std::make_shared<const RunList>(run);
  auto shared_qrels = std::make_shared<const Qrels>(qrels);
  return [shared_run, shared_qrels, cfg](int epoch, std::vector<TrainingExample>& data) {
    for (auto& ex : data) {
      ex.negative_doc_ids =
          sample_negatives(*shared_run, *shared_qrels, ex.query_id, cfg.negative_pool_depth,
                           cfg.negatives_per_query, negative_seed(cfg.seed, ex.query_id, epoch));
    }
  };
}

std::vector<TrainingExample> build_training_examples(
    std::span<const TextRecord> queries, const RunList& first_run, const Qrels& qrels,
    const Vocab& vocab, const DocumentStore& docs, PrfDepth depth, const PrfTemplate& tmpl,
    CasePolicy policy, const TrainConfig& cfg) {
  const auto by_query = results_by_query(first_run);
  std::vector<TrainingExample> out;
  for (const auto& q : queries) {
    const auto& judged = qrels.judgments(q.id);
    std::string positive;
    int best = 0;
    for (const auto& [doc, g] : judged) {
      if (g > best || (g == best && g >= 1 && doc < positive)) {
        best = g;
        positive = doc;
      }
    }
    if (best < 1) continue;
    const auto it = by_query.find(q.id);
    if (it == by_query.end()) throw InputError("training query missing from first-round run: " + q.id);
    TrainingExample ex;
    ex.query_id = q.id;
    ex.prf_query = compose_feedback_query(q.text, it->second, vocab, docs, depth, tmpl, policy);
    ex.positive_doc_id = positive;
    ex.negative_doc_ids =
        sample_negatives(first_run, qrels, q.id, cfg.negative_pool_depth, cfg.negatives_per_query,
                         negative_seed(cfg.seed, q.id, 0));
    out.push_back(std::move(ex));
  }
  return out;
}

void write_train_log(std::span<const TrainLogEntry> log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "step,loss,lr\n";
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g\n", e.step, e.loss, e.learning_rate);
    out << buf;
  }
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace prf

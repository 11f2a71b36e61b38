#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "prf/composer.hpp"
#include "prf/encoder.hpp"
#include "prf/evaluator.hpp"
#include "prf/index.hpp"
#include "prf/loss.hpp"
#include "prf/pipeline.hpp"
#include "prf/run.hpp"

namespace prf {

enum class OptimizerKind { AdamW, Lamb };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view to_string(OptimizerKind kind) noexcept;

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double learning_rate = 1e-5;
  int batch_size = 32;
  int grad_accum_steps = 1;
  int epochs = 10;
  int negatives_per_query = 21;
  int negative_pool_depth = 200;
  bool in_batch_negatives = false;
  HeadPolicy head_policy = HeadPolicy::InheritHead;
  std::uint64_t seed = 42;

  /// Throws prf::InputError when a count is < 1 or learning_rate < 0.
  void validate() const;

  /// Missing keys keep their defaults; unknown enum strings throw
  /// prf::InputError.
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Moment estimates per tensor plus the hyper-parameters shared by AdamW and
/// LAMB.
struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
  double weight_decay = 0.01;

  static OptimizerState for_params(const EncoderParams& params);
};

/// One update. AdamW: bias-corrected Adam direction plus decoupled weight
/// decay on weight matrices. LAMB: the same direction rescaled per tensor by
/// ||w|| / ||update|| clipped to [0, 10], falling back to 1 when either norm
/// is zero. Throws prf::Error on non-finite gradients.
void optimizer_step(OptimizerState& state, EncoderParams& params,
                    const EncoderParams& grads, OptimizerKind kind,
                    double learning_rate);

/// Uniform sample without replacement of n documents from the top
/// pool_depth entries of `query_id`, skipping documents judged relevant
/// (grade >= 1). Sorted by doc id. Throws prf::Error "insufficient
/// negatives".
std::vector<std::string> sample_negatives(const RunList& run, const Qrels& qrels,
                                          const std::string& query_id,
                                          int pool_depth, int n, std::uint64_t seed);

struct TrainLogEntry {
  int step = 0;
  int epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  EncoderParams params;
  std::vector<TrainLogEntry> log;
  std::vector<double> epoch_mean_loss;
};

/// Invoked before each epoch; may rewrite the examples' negatives.
using EpochHook = std::function<void(int epoch, std::vector<TrainingExample>& data)>;

/// Trains a feedback query encoder initialised from `base`. Document
/// embeddings come from `doc_index` and are never modified. Each optimizer
/// step averages example-mean microbatch gradients over grad_accum_steps
/// microbatches.
TrainResult train(std::vector<TrainingExample> data, const EncoderParams& base,
                  const VectorIndex& doc_index, const TrainConfig& cfg,
                  const EpochHook& before_epoch = {});

/// Resamples each example's negatives from `run` with an epoch-dependent
/// seed derived from cfg.seed.
EpochHook resample_negatives_each_epoch(const RunList& run, const Qrels& qrels,
                                        const TrainConfig& cfg);

/// One example per training query that has a judged relevant document: the
/// feedback query is composed from the top depth.k documents of `first_run`,
/// the positive is the highest-graded document (ties by doc id) and the
/// negatives are those of epoch 0.
std::vector<TrainingExample> build_training_examples(
    std::span<const TextRecord> queries, const RunList& first_run, const Qrels& qrels,
    const Vocab& vocab, const DocumentStore& docs, PrfDepth depth,
    const PrfTemplate& tmpl, CasePolicy policy, const TrainConfig& cfg);

/// "step,loss,lr" header then one row per optimizer step.
void write_train_log(std::span<const TrainLogEntry> log, const std::filesystem::path& path);

}  // namespace prf

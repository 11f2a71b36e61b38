#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prf/loss.hpp"
#include "prf/tokenizer.hpp"

namespace prf {

struct EncoderConfig {
  std::int32_t dim = 64;
  std::int32_t layers = 2;
  std::int32_t heads = 4;
  std::int32_t max_len = 512;
  std::int32_t vocab_size = 0;

  std::int32_t head_dim() const noexcept { return dim / heads; }
  std::int32_t ffn_dim() const noexcept { return 4 * dim; }

  /// Throws prf::InputError when dim % heads != 0, layers < 1, max_len < 8
  /// or vocab_size < 1.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// How a tensor participates in optimisation. Only kWeight receives
/// decoupled weight decay.
enum class TensorRole { kEmbedding, kWeight, kBias, kNorm };

struct LayerNormParams {
  Matrix gain;  // 1 x dim
  Matrix bias;  // 1 x dim
  friend bool operator==(const LayerNormParams&, const LayerNormParams&) = default;
};

/// Pre-norm block: h = x + attn(norm1(x)); out = h + ffn(norm2(h)).
struct LayerParams {
  LayerNormParams attn_norm;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  LayerNormParams ffn_norm;
  Matrix w1, b1, w2, b2;
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Projection plus normalisation applied to the pooled first-position state.
struct HeadParams {
  Matrix w;  // dim x dim, y = x W + b
  Matrix b;  // 1 x dim
  LayerNormParams norm;
  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

/// All encoder weights. Tensor order (also the on-disk order):
///   token_embeddings, position_embeddings,
///   per layer: attn_norm.{gain,bias}, wq, bq, wk, bk, wv, bv, wo, bo,
///              ffn_norm.{gain,bias}, w1, b1, w2, b2,
///   head: w, b, norm.{gain,bias}.
struct EncoderParams {
  EncoderConfig config;
  Matrix token_embeddings;     // vocab_size x dim
  Matrix position_embeddings;  // max_len x dim
  std::vector<LayerParams> layers;
  HeadParams head;

  /// Every tensor shaped for `config`, filled with zeros (gains included).
  static EncoderParams zeros(const EncoderConfig& config);

  /// Calls fn(name, tensor, role) for every tensor in the documented order.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) { visit(*this, fn); }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const { visit(*this, fn); }

  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn);
};

struct Embedding {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const Embedding&, const Embedding&) = default;
};

/// Small random initialisation: N(0, 0.02) weights, zero biases, unit gains.
EncoderParams random_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Pooled, head-projected representation of `tokens`. Every position takes
/// part in attention, padding included. Throws prf::InputError
/// "sequence too long" or on out-of-range ids.
Embedding encode(const EncoderParams& params, std::span<const TokenId> tokens);
inline Embedding encode(const EncoderParams& params, const TokenSequence& tokens) {
  return encode(params, std::span<const TokenId>(tokens.ids));
}

/// Inner product. Throws prf::InputError on a dimension mismatch.
double score(std::span<const double> q, std::span<const double> d);
inline double score(const Embedding& q, const Embedding& d) {
  return score(std::span<const double>(q.values), std::span<const double>(d.values));
}

enum class HeadPolicy { InheritHead, ReinitHead };

HeadPolicy parse_head_policy(std::string_view name);
std::string_view to_string(HeadPolicy policy) noexcept;

/// Copies the body of `base`. InheritHead copies the head too; ReinitHead
/// draws head.w from U(-1/sqrt(dim), 1/sqrt(dim)), zeroes head.b and resets
/// the head norm to unit gain and zero bias.
EncoderParams init_prf_encoder(const EncoderParams& base, HeadPolicy policy,
                               std::uint64_t seed);

/// Replaces the head of `params` with `head` (shapes must match).
void replace_head(EncoderParams& params, const HeadParams& head);

enum class DocSide {
  Frozen,  // document embeddings are fixed inputs
  Shared   // documents are encoded by the parameters being differentiated
};

struct LossConfig {
  DocSide doc_side = DocSide::Frozen;
  /// Frozen side: stored embedding for a document id. Must throw when the id
  /// is unknown.
  std::function<std::span<const double>(const std::string&)> doc_embedding;
  /// Shared side: encoder input for a document id.
  std::function<const TokenSequence&(const std::string&)> doc_tokens;
  /// Adds every other example's positive to an example's negatives.
  bool in_batch_negatives = false;
};

struct GradResult {
  double loss = 0.0;                  // mean over the batch
  std::vector<double> example_losses; // in batch order
  EncoderParams gradients;            // d(mean loss) / d(param)
};

/// Batch-mean contrastive loss and its exact gradient. Throws prf::Error
/// "numerical overflow in example <i>" when a loss is not finite.
GradResult grad(const EncoderParams& params,
                std::span<const TrainingExample> batch,
                const LossConfig& loss_cfg);

/// Final negative list used for example `index` of `batch` under `cfg`.
std::vector<std::string> effective_negatives(
    std::span<const TrainingExample> batch, std::size_t index,
    const LossConfig& cfg);

/// Little-endian: "PRFENC1", five int32 config fields (dim, layers, heads,
/// max_len, vocab_size), then every tensor in order as float64.
void save_params(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_params(const std::filesystem::path& path);

namespace instrumentation {
/// Process-wide count of encode() calls.
std::uint64_t encode_calls() noexcept;
void reset_encode_calls() noexcept;
}  // namespace instrumentation

// ---------------------------------------------------------------------------

template <typename Self, typename Fn>
void EncoderParams::visit(Self& self, Fn& fn) {
  fn("token_embeddings", self.token_embeddings, TensorRole::kEmbedding);
  fn("position_embeddings", self.position_embeddings, TensorRole::kEmbedding);
  for (std::size_t i = 0; i < self.layers.size(); ++i) {
    auto& l = self.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    fn(p + "attn_norm.gain", l.attn_norm.gain, TensorRole::kNorm);
    fn(p + "attn_norm.bias", l.attn_norm.bias, TensorRole::kNorm);
    fn(p + "wq", l.wq, TensorRole::kWeight);
    fn(p + "bq", l.bq, TensorRole::kBias);
    fn(p + "wk", l.wk, TensorRole::kWeight);
    fn(p + "bk", l.bk, TensorRole::kBias);
    fn(p + "wv", l.wv, TensorRole::kWeight);
    fn(p + "bv", l.bv, TensorRole::kBias);
    fn(p + "wo", l.wo, TensorRole::kWeight);
    fn(p + "bo", l.bo, TensorRole::kBias);
    fn(p + "ffn_norm.gain", l.ffn_norm.gain, TensorRole::kNorm);
    fn(p + "ffn_norm.bias", l.ffn_norm.bias, TensorRole::kNorm);
    fn(p + "w1", l.w1, TensorRole::kWeight);
    fn(p + "b1", l.b1, TensorRole::kBias);
    fn(p + "w2", l.w2, TensorRole::kWeight);
    fn(p + "b2", l.b2, TensorRole::kBias);
  }
  fn("head.w", self.head.w, TensorRole::kWeight);
  fn("head.b", self.head.b, TensorRole::kBias);
  fn("head.norm.gain", self.head.norm.gain, TensorRole::kNorm);
  fn("head.norm.bias", self.head.norm.bias, TensorRole::kNorm);
}

}  // namespace prf

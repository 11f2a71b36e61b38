#include "prf/encoder.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <random>

#include "prf/error.hpp"
#include "prf/util.hpp"

namespace prf {
namespace {

static_assert(std::endian::native == std::endian::little,
              "params serialization assumes a little-endian host");

constexpr double kNormEps = 1e-5;
constexpr char kParamsMagic[] = "PRFENC1";
constexpr std::size_t kParamsMagicLen = 7;

std::atomic<std::uint64_t> g_encode_calls{0};

LayerNormParams make_norm(std::size_t dim, double gain) {
  return {Matrix(1, dim, gain), Matrix(1, dim, 0.0)};
}

// ---- row-wise layer norm ---------------------------------------------------

double norm_forward(std::span<const double> x, std::span<const double> gain,
                    std::span<const double> bias, std::span<double> xhat,
                    std::span<double> y) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double rstd = 1.0 / std::sqrt(var + kNormEps);
  for (std::size_t j = 0; j < n; ++j) {
    xhat[j] = (x[j] - mean) * rstd;
    y[j] = gain[j] * xhat[j] + bias[j];
  }
  return rstd;
}

// dx += d(norm)/dx^T dy; parameter gradients accumulate into dgain/dbias.
void norm_backward(std::span<const double> dy, std::span<const double> xhat, double rstd,
                   std::span<const double> gain, std::span<double> dgain,
                   std::span<double> dbias, std::span<double> dx) {
  const std::size_t n = dy.size();
  double mean_d = 0.0;
  double mean_dx = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double dxhat = dy[j] * gain[j];
    dgain[j] += dy[j] * xhat[j];
    dbias[j] += dy[j];
    mean_d += dxhat;
    mean_dx += dxhat * xhat[j];
  }
  mean_d /= static_cast<double>(n);
  mean_dx /= static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double dxhat = dy[j] * gain[j];
    dx[j] += rstd * (dxhat - mean_d - xhat[j] * mean_dx);
  }
}

struct NormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

void norm_rows(const Matrix& x, const LayerNormParams& p, Matrix& y, NormCache& cache) {
  y = Matrix(x.rows(), x.cols());
  cache.xhat = Matrix(x.rows(), x.cols());
  cache.rstd.assign(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    cache.rstd[i] = norm_forward(x.row(i), p.gain.values(), p.bias.values(),
                                 cache.xhat.row(i), y.row(i));
  }
}

void norm_rows_backward(const Matrix& dy, const NormCache& cache, const LayerNormParams& p,
                        LayerNormParams& gp, Matrix& dx) {
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    norm_backward(dy.row(i), cache.xhat.row(i), cache.rstd[i], p.gain.values(),
                  gp.gain.values(), gp.bias.values(), dx.row(i));
  }
}

// ---- dense layers ----------------------------------------------------------

// y = x w + b
void affine(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& y) {
  const std::size_t n = x.rows(), in = w.rows(), out = w.cols();
  y = Matrix(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    auto yi = y.row(i);
    const auto xi = x.row(i);
    for (std::size_t c = 0; c < out; ++c) yi[c] = b(0, c);
    for (std::size_t k = 0; k < in; ++k) {
      const double a = xi[k];
      if (a == 0.0) continue;
      const auto wk = w.row(k);
      for (std::size_t c = 0; c < out; ++c) yi[c] += a * wk[c];
    }
  }
}

// dw += x^T dy, db += colsum(dy), and when dx is given dx += dy w^T.
void affine_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw,
                     Matrix& db, Matrix* dx) {
  const std::size_t n = x.rows(), in = w.rows(), out = w.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const auto dyi = dy.row(i);
    const auto xi = x.row(i);
    bool any = false;
    for (std::size_t c = 0; c < out; ++c) {
      if (dyi[c] != 0.0) {
        any = true;
        break;
      }
    }
    if (!any) continue;
    for (std::size_t c = 0; c < out; ++c) db(0, c) += dyi[c];
    for (std::size_t k = 0; k < in; ++k) {
      const double a = xi[k];
      auto dwk = dw.row(k);
      const auto wk = w.row(k);
      double acc = 0.0;
      for (std::size_t c = 0; c < out; ++c) {
        dwk[c] += a * dyi[c];
        acc += dyi[c] * wk[c];
      }
      if (dx != nullptr) (*dx)(i, k) += acc;
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// ---- forward with cache ----------------------------------------------------

struct LayerCache {
  Matrix x;
  NormCache n1;
  Matrix a;
  Matrix q, k, v;
  std::vector<double> probs;  // heads x L x L
  Matrix o;
  Matrix h;
  NormCache n2;
  Matrix b;
  Matrix z1, g1;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::vector<double> pooled, z, xhat;
  double rstd = 0.0;
};

void check_input(const EncoderParams& params, std::span<const TokenId> tokens) {
  const auto& cfg = params.config;
  if (tokens.size() > static_cast<std::size_t>(cfg.max_len)) {
    throw InputError("sequence too long");
  }
  if (tokens.empty()) throw InputError("empty sequence");
  for (TokenId t : tokens) {
    if (t >= static_cast<TokenId>(cfg.vocab_size)) {
      throw InputError("token id " + std::to_string(t) + " outside vocabulary");
    }
  }
}

void attention(const EncoderConfig& cfg, LayerCache& c) {
  const std::size_t len = c.q.rows();
  const auto heads = static_cast<std::size_t>(cfg.heads);
  const auto hd = static_cast<std::size_t>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  c.probs.assign(heads * len * len, 0.0);
  c.o = Matrix(len, static_cast<std::size_t>(cfg.dim));
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < len; ++i) {
      double* p = c.probs.data() + (h * len + i) * len;
      const double* qi = c.q.row(i).data() + off;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) {
        const double* kj = c.k.row(j).data() + off;
        double s = 0.0;
        for (std::size_t d = 0; d < hd; ++d) s += qi[d] * kj[d];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        p[j] = std::exp(p[j] - mx);
        sum += p[j];
      }
      double* oi = c.o.row(i).data() + off;
      for (std::size_t j = 0; j < len; ++j) {
        p[j] /= sum;
        const double* vj = c.v.row(j).data() + off;
        for (std::size_t d = 0; d < hd; ++d) oi[d] += p[j] * vj[d];
      }
    }
  }
}

void attention_backward(const EncoderConfig& cfg, const LayerCache& c, const Matrix& d_o,
                        Matrix& dq, Matrix& dk, Matrix& dv) {
  const std::size_t len = c.q.rows();
  const auto heads = static_cast<std::size_t>(cfg.heads);
  const auto hd = static_cast<std::size_t>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> dp(len);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < len; ++i) {
      const double* p = c.probs.data() + (h * len + i) * len;
      const double* doi = d_o.row(i).data() + off;
      bool any = false;
      for (std::size_t d = 0; d < hd; ++d) any = any || doi[d] != 0.0;
      if (!any) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double* vj = c.v.row(j).data() + off;
        double s = 0.0;
        for (std::size_t d = 0; d < hd; ++d) s += doi[d] * vj[d];
        dp[j] = s;
        dot += p[j] * s;
        double* dvj = dv.row(j).data() + off;
        for (std::size_t d = 0; d < hd; ++d) dvj[d] += p[j] * doi[d];
      }
      const double* qi = c.q.row(i).data() + off;
      double* dqi = dq.row(i).data() + off;
      for (std::size_t j = 0; j < len; ++j) {
        const double ds = p[j] * (dp[j] - dot) * scale;
        if (ds == 0.0) continue;
        const double* kj = c.k.row(j).data() + off;
        double* dkj = dk.row(j).data() + off;
        for (std::size_t d = 0; d < hd; ++d) {
          dqi[d] += ds * kj[d];
          dkj[d] += ds * qi[d];
        }
      }
    }
  }
}

Embedding forward(const EncoderParams& params, std::span<const TokenId> tokens,
                  ForwardCache& cache) {
  check_input(params, tokens);
  const auto& cfg = params.config;
  const std::size_t len = tokens.size();
  const auto dim = static_cast<std::size_t>(cfg.dim);

  Matrix x(len, dim);
  for (std::size_t i = 0; i < len; ++i) {
    const auto e = params.token_embeddings.row(tokens[i]);
    const auto p = params.position_embeddings.row(i);
    auto xi = x.row(i);
    for (std::size_t d = 0; d < dim; ++d) xi[d] = e[d] + p[d];
  }

  cache.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& lp = params.layers[l];
    LayerCache& c = cache.layers[l];
    c.x = std::move(x);
    norm_rows(c.x, lp.attn_norm, c.a, c.n1);
    affine(c.a, lp.wq, lp.bq, c.q);
    affine(c.a, lp.wk, lp.bk, c.k);
    affine(c.a, lp.wv, lp.bv, c.v);
    attention(cfg, c);
    affine(c.o, lp.wo, lp.bo, c.h);
    for (std::size_t i = 0; i < c.h.size(); ++i) c.h.values()[i] += c.x.values()[i];
    norm_rows(c.h, lp.ffn_norm, c.b, c.n2);
    affine(c.b, lp.w1, lp.b1, c.z1);
    c.g1 = Matrix(c.z1.rows(), c.z1.cols());
    for (std::size_t i = 0; i < c.z1.size(); ++i) c.g1.values()[i] = gelu(c.z1.values()[i]);
    affine(c.g1, lp.w2, lp.b2, x);
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += c.h.values()[i];
  }

  const auto pooled = x.row(0);
  cache.pooled.assign(pooled.begin(), pooled.end());
  cache.z.assign(dim, 0.0);
  for (std::size_t c = 0; c < dim; ++c) cache.z[c] = params.head.b(0, c);
  for (std::size_t k = 0; k < dim; ++k) {
    const double a = cache.pooled[k];
    const auto wk = params.head.w.row(k);
    for (std::size_t c = 0; c < dim; ++c) cache.z[c] += a * wk[c];
  }
  cache.xhat.assign(dim, 0.0);
  Embedding out{std::vector<double>(dim)};
  cache.rstd = norm_forward(cache.z, params.head.norm.gain.values(),
                            params.head.norm.bias.values(), cache.xhat, out.values);
  return out;
}

// grads += d(output . d_out) / d(params)
void backward(const EncoderParams& params, std::span<const TokenId> tokens,
              const ForwardCache& cache, std::span<const double> d_out,
              EncoderParams& grads) {
  const auto& cfg = params.config;
  const std::size_t len = tokens.size();
  const auto dim = static_cast<std::size_t>(cfg.dim);

  std::vector<double> dz(dim, 0.0);
  norm_backward(d_out, cache.xhat, cache.rstd, params.head.norm.gain.values(),
                grads.head.norm.gain.values(), grads.head.norm.bias.values(), dz);
  Matrix dx(len, dim);
  for (std::size_t k = 0; k < dim; ++k) {
    auto gwk = grads.head.w.row(k);
    const auto wk = params.head.w.row(k);
    double acc = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      gwk[c] += cache.pooled[k] * dz[c];
      acc += dz[c] * wk[c];
    }
    dx(0, k) = acc;
  }
  for (std::size_t c = 0; c < dim; ++c) grads.head.b(0, c) += dz[c];

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const LayerParams& lp = params.layers[l];
    LayerParams& gl = grads.layers[l];
    const LayerCache& c = cache.layers[l];

    // out = h + ffn(norm2(h))
    Matrix dh = dx;
    Matrix dg1(len, c.g1.cols());
    affine_backward(c.g1, lp.w2, dx, gl.w2, gl.b2, &dg1);
    for (std::size_t i = 0; i < dg1.size(); ++i) dg1.values()[i] *= gelu_grad(c.z1.values()[i]);
    Matrix db(len, dim);
    affine_backward(c.b, lp.w1, dg1, gl.w1, gl.b1, &db);
    norm_rows_backward(db, c.n2, lp.ffn_norm, gl.ffn_norm, dh);

    // h = x + attn(norm1(x))
    Matrix dxin = dh;
    Matrix d_o(len, dim);
    affine_backward(c.o, lp.wo, dh, gl.wo, gl.bo, &d_o);
    Matrix dq(len, dim), dk(len, dim), dv(len, dim);
    attention_backward(cfg, c, d_o, dq, dk, dv);
    Matrix da(len, dim);
    affine_backward(c.a, lp.wq, dq, gl.wq, gl.bq, &da);
    affine_backward(c.a, lp.wk, dk, gl.wk, gl.bk, &da);
    affine_backward(c.a, lp.wv, dv, gl.wv, gl.bv, &da);
    norm_rows_backward(da, c.n1, lp.attn_norm, gl.attn_norm, dxin);
    dx = std::move(dxin);
  }

  for (std::size_t i = 0; i < len; ++i) {
    auto ge = grads.token_embeddings.row(tokens[i]);
    auto gp = grads.position_embeddings.row(i);
    const auto di = dx.row(i);
    for (std::size_t d = 0; d < dim; ++d) {
      ge[d] += di[d];
      gp[d] += di[d];
    }
  }
}

void add_into(EncoderParams& dst, const EncoderParams& src) {
  std::vector<std::span<const double>> parts;
  src.for_each_tensor([&](const std::string&, const Matrix& m, TensorRole) {
    parts.push_back(m.values());
  });
  std::size_t idx = 0;
  dst.for_each_tensor([&](const std::string&, Matrix& m, TensorRole) {
    auto d = m.values();
    const auto s = parts[idx++];
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  });
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void EncoderConfig::validate() const {
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw InputError("encoder dim must be a positive multiple of heads");
  }
  if (layers < 1) throw InputError("encoder needs at least one layer");
  if (max_len < 8) throw InputError("encoder max_len must be >= 8");
  if (vocab_size < 1) throw InputError("encoder vocab_size must be >= 1");
}

EncoderParams EncoderParams::zeros(const EncoderConfig& config) {
  config.validate();
  const auto dim = static_cast<std::size_t>(config.dim);
  const auto ffn = static_cast<std::size_t>(config.ffn_dim());
  EncoderParams p;
  p.config = config;
  p.token_embeddings = Matrix(static_cast<std::size_t>(config.vocab_size), dim);
  p.position_embeddings = Matrix(static_cast<std::size_t>(config.max_len), dim);
  p.layers.resize(static_cast<std::size_t>(config.layers));
  for (auto& l : p.layers) {
    l.attn_norm = make_norm(dim, 0.0);
    l.wq = Matrix(dim, dim);
    l.bq = Matrix(1, dim);
    l.wk = Matrix(dim, dim);
    l.bk = Matrix(1, dim);
    l.wv = Matrix(dim, dim);
    l.bv = Matrix(1, dim);
    l.wo = Matrix(dim, dim);
    l.bo = Matrix(1, dim);
    l.ffn_norm = make_norm(dim, 0.0);
    l.w1 = Matrix(dim, ffn);
    l.b1 = Matrix(1, ffn);
    l.w2 = Matrix(ffn, dim);
    l.b2 = Matrix(1, dim);
  }
  p.head.w = Matrix(dim, dim);
  p.head.b = Matrix(1, dim);
  p.head.norm = make_norm(dim, 0.0);
  return p;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, const Matrix& m, TensorRole) { n += m.size(); });
  return n;
}

bool EncoderParams::all_finite() const {
  bool ok = true;
  for_each_tensor([&](const std::string&, const Matrix& m, TensorRole) {
    for (double v : m.values()) ok = ok && std::isfinite(v);
  });
  return ok;
}

EncoderParams random_encoder(const EncoderConfig& config, std::uint64_t seed) {
  EncoderParams p = EncoderParams::zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  p.for_each_tensor([&](const std::string&, Matrix& m, TensorRole role) {
    switch (role) {
      case TensorRole::kEmbedding:
      case TensorRole::kWeight:
        for (double& v : m.values()) v = normal(rng);
        break;
      case TensorRole::kBias:
        break;
      case TensorRole::kNorm:
        break;
    }
  });
  for (auto& l : p.layers) {
    l.attn_norm.gain.fill(1.0);
    l.ffn_norm.gain.fill(1.0);
  }
  p.head.norm.gain.fill(1.0);
  return p;
}

Embedding encode(const EncoderParams& params, std::span<const TokenId> tokens) {
  g_encode_calls.fetch_add(1, std::memory_order_relaxed);
  ForwardCache cache;
  return forward(params, tokens, cache);
}

double score(std::span<const double> q, std::span<const double> d) {
  if (q.size() != d.size()) {
    throw InputError("dimension mismatch: " + std::to_string(q.size()) + " vs " +
                     std::to_string(d.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * d[i];
  return s;
}

HeadPolicy parse_head_policy(std::string_view name) {
  if (name == "inherit") return HeadPolicy::InheritHead;
  if (name == "reinit") return HeadPolicy::ReinitHead;
  throw InputError("unknown head policy: " + std::string(name));
}

std::string_view to_string(HeadPolicy policy) noexcept {
  return policy == HeadPolicy::InheritHead ? "inherit" : "reinit";
}

EncoderParams init_prf_encoder(const EncoderParams& base, HeadPolicy policy,
                               std::uint64_t seed) {
  EncoderParams out = base;
  if (policy == HeadPolicy::InheritHead) return out;
  const double bound = 1.0 / std::sqrt(static_cast<double>(base.config.dim));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (double& v : out.head.w.values()) v = uniform(rng);
  out.head.b.fill(0.0);
  out.head.norm.gain.fill(1.0);
  out.head.norm.bias.fill(0.0);
  return out;
}

void replace_head(EncoderParams& params, const HeadParams& head) {
  const auto dim = static_cast<std::size_t>(params.config.dim);
  const bool ok = head.w.rows() == dim && head.w.cols() == dim && head.b.cols() == dim &&
                  head.norm.gain.cols() == dim && head.norm.bias.cols() == dim;
  if (!ok) throw InputError("head shape does not match encoder dim");
  params.head = head;
}

std::vector<std::string> effective_negatives(std::span<const TrainingExample> batch,
                                             std::size_t index, const LossConfig& cfg) {
  const TrainingExample& ex = batch[index];
  std::vector<std::string> negs = ex.negative_doc_ids;
  if (cfg.in_batch_negatives) {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const std::string& peer = batch[j].positive_doc_id;
      if (j == index || peer == ex.positive_doc_id || contains(negs, peer)) continue;
      negs.push_back(peer);
    }
  }
  return negs;
}

GradResult grad(const EncoderParams& params, std::span<const TrainingExample> batch,
                const LossConfig& loss_cfg) {
  if (batch.empty()) throw InputError("empty batch");
  const bool shared = loss_cfg.doc_side == DocSide::Shared;
  if (shared ? !loss_cfg.doc_tokens : !loss_cfg.doc_embedding) {
    throw InputError("loss config lacks a document source");
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_input(params, batch[i].prf_query.ids);
    if (contains(batch[i].negative_doc_ids, batch[i].positive_doc_id)) {
      throw InputError("positive document among negatives in example " + std::to_string(i));
    }
  }

  const std::size_t n = batch.size();
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<EncoderParams> per_example(n);
  std::vector<double> losses(n, 0.0);

  parallel_for(n, [&](std::size_t i) {
    const TrainingExample& ex = batch[i];
    EncoderParams g = EncoderParams::zeros(params.config);
    ForwardCache qcache;
    const Embedding q = forward(params, ex.prf_query.ids, qcache);

    std::vector<std::string> ids = effective_negatives(batch, i, loss_cfg);
    if (ids.empty()) throw InputError("example " + std::to_string(i) + " has no negatives");
    ids.insert(ids.begin(), ex.positive_doc_id);

    std::vector<std::vector<double>> docs(ids.size());
    std::vector<ForwardCache> doc_caches(shared ? ids.size() : 0);
    std::vector<const TokenSequence*> doc_inputs(shared ? ids.size() : 0);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (shared) {
        doc_inputs[j] = &loss_cfg.doc_tokens(ids[j]);
        docs[j] = forward(params, doc_inputs[j]->ids, doc_caches[j]).values;
      } else {
        const auto v = loss_cfg.doc_embedding(ids[j]);
        docs[j].assign(v.begin(), v.end());
      }
    }

    std::vector<double> neg_scores(ids.size() - 1);
    const double pos_score = score(q.values, docs[0]);
    bool finite = std::isfinite(pos_score);
    for (std::size_t j = 1; j < ids.size(); ++j) {
      neg_scores[j - 1] = score(q.values, docs[j]);
      finite = finite && std::isfinite(neg_scores[j - 1]);
    }
    if (!finite) throw Error("numerical overflow in example " + std::to_string(i));
    const ScoreLoss sl = nce_from_scores(pos_score, neg_scores);
    if (!std::isfinite(sl.loss)) throw Error("numerical overflow in example " + std::to_string(i));
    losses[i] = sl.loss;

    const std::size_t dim = q.dim();
    std::vector<double> d_score(ids.size());
    d_score[0] = sl.d_positive * scale;
    for (std::size_t j = 1; j < ids.size(); ++j) d_score[j] = sl.d_negatives[j - 1] * scale;

    std::vector<double> dq(dim, 0.0);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      for (std::size_t d = 0; d < dim; ++d) dq[d] += d_score[j] * docs[j][d];
    }
    backward(params, ex.prf_query.ids, qcache, dq, g);
    if (shared) {
      std::vector<double> dd(dim);
      for (std::size_t j = 0; j < ids.size(); ++j) {
        for (std::size_t d = 0; d < dim; ++d) dd[d] = d_score[j] * q.values[d];
        backward(params, doc_inputs[j]->ids, doc_caches[j], dd, g);
      }
    }
    per_example[i] = std::move(g);
  });

  GradResult result;
  result.gradients = EncoderParams::zeros(params.config);
  for (std::size_t i = 0; i < n; ++i) {
    add_into(result.gradients, per_example[i]);
    result.loss += losses[i];
  }
  result.loss *= scale;
  result.example_losses = std::move(losses);
  return result;
}

void save_params(const EncoderParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kParamsMagic, kParamsMagicLen);
  const auto& c = params.config;
  for (std::int32_t v : {c.dim, c.layers, c.heads, c.max_len, c.vocab_size}) write_pod(out, v);
  params.for_each_tensor([&](const std::string&, const Matrix& m, TensorRole) {
    out.write(reinterpret_cast<const char*>(m.values().data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  });
  if (!out) throw Error("write failed: " + path.string());
}

EncoderParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("no such file: " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (bytes.size() < kParamsMagicLen ||
      std::memcmp(bytes.data(), kParamsMagic, kParamsMagicLen) != 0) {
    throw InputError("not a params file: " + path.string());
  }
  constexpr std::size_t kHeader = kParamsMagicLen + 5 * sizeof(std::int32_t);
  if (bytes.size() < kHeader) throw InputError("corrupt params file: " + path.string());
  std::int32_t fields[5];
  std::memcpy(fields, bytes.data() + kParamsMagicLen, sizeof(fields));
  EncoderConfig cfg{fields[0], fields[1], fields[2], fields[3], fields[4]};
  EncoderParams p;
  try {
    p = EncoderParams::zeros(cfg);
  } catch (const InputError&) {
    throw InputError("corrupt params file: " + path.string());
  }
  if (bytes.size() != kHeader + p.parameter_count() * sizeof(double)) {
    throw InputError("corrupt params file: " + path.string());
  }
  std::size_t offset = kHeader;
  p.for_each_tensor([&](const std::string&, Matrix& m, TensorRole) {
    std::memcpy(m.values().data(), bytes.data() + offset, m.size() * sizeof(double));
    offset += m.size() * sizeof(double);
  });
  if (!p.all_finite()) throw InputError("corrupt params file: " + path.string());
  return p;
}

namespace instrumentation {
std::uint64_t encode_calls() noexcept { return g_encode_calls.load(); }
void reset_encode_calls() noexcept { g_encode_calls.store(0); }
}  // namespace instrumentation

}  // namespace prf

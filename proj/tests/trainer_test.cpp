#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "prf/error.hpp"
#include "prf/synthetic.hpp"
#include "prf/trainer.hpp"
#include "prf/util.hpp"
#include "test_support.hpp"

namespace {

using prf::EncoderParams;
using prf::OptimizerKind;
using prf::OptimizerState;
using prf::TensorRole;
using prf::TrainConfig;

std::vector<double> flatten(const EncoderParams& p) {
  std::vector<double> out;
  p.for_each_tensor([&](const std::string&, const prf::Matrix& m, TensorRole) {
    out.insert(out.end(), m.values().begin(), m.values().end());
  });
  return out;
}

EncoderParams tiny_zeros() {
  return EncoderParams::zeros(prf::testing::small_config(10, 8, 1, 2, 8));
}

// Sets one entry of the flattened parameters.
void set_flat(EncoderParams& p, std::size_t target, double value) {
  std::size_t offset = 0;
  p.for_each_tensor([&](const std::string&, prf::Matrix& m, TensorRole) {
    if (target >= offset && target < offset + m.size()) m.values()[target - offset] = value;
    offset += m.size();
  });
}

TEST(Optimizer, AdamSingleStepIsUnitUpdate) {
  EncoderParams w = tiny_zeros();
  EncoderParams g = tiny_zeros();
  set_flat(g, 5, 1.0);
  OptimizerState state = OptimizerState::for_params(w);
  state.weight_decay = 0.0;
  prf::optimizer_step(state, w, g, OptimizerKind::AdamW, 0.1);
  const auto flat = flatten(w);
  // m_hat = 1, v_hat = 1, update = 1 / (1 + 1e-6)
  EXPECT_NEAR(flat[5], -0.1, 1e-6);
  EXPECT_DOUBLE_EQ(flat[5], -0.1 / (1.0 + 1e-6));
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (i != 5) {
      EXPECT_EQ(flat[i], 0.0);
    }
  }
  EXPECT_EQ(state.step, 1);
}

TEST(Optimizer, ZeroGradientsWithoutDecayLeaveParamsUnchanged) {
  const EncoderParams start =
      prf::testing::dense_random_encoder(prf::testing::small_config(10, 8, 1, 2, 8), 1);
  for (auto kind : {OptimizerKind::AdamW, OptimizerKind::Lamb}) {
    EncoderParams w = start;
    OptimizerState state = OptimizerState::for_params(w);
    state.weight_decay = 0.0;
    for (int i = 0; i < 3; ++i) prf::optimizer_step(state, w, tiny_zeros(), kind, 0.1);
    EXPECT_EQ(flatten(w), flatten(start));
  }
}

TEST(Optimizer, DecayTouchesOnlyWeightMatrices) {
  const EncoderParams start =
      prf::testing::dense_random_encoder(prf::testing::small_config(10, 8, 1, 2, 8), 2);
  EncoderParams w = start;
  OptimizerState state = OptimizerState::for_params(w);
  prf::optimizer_step(state, w, tiny_zeros(), OptimizerKind::AdamW, 0.1);
  std::vector<const prf::Matrix*> before;
  start.for_each_tensor(
      [&](const std::string&, const prf::Matrix& m, TensorRole) { before.push_back(&m); });
  std::size_t t = 0;
  w.for_each_tensor([&](const std::string& name, const prf::Matrix& m, TensorRole role) {
    const auto& b = *before[t++];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double expected =
          role == TensorRole::kWeight ? b.values()[i] - 0.1 * 0.01 * b.values()[i] : b.values()[i];
      EXPECT_DOUBLE_EQ(m.values()[i], expected) << name;
    }
  });
}

TEST(Optimizer, LambOnZeroWeightsEqualsAdamW) {
  std::mt19937_64 rng(3);
  EncoderParams g = tiny_zeros();
  g.for_each_tensor([&](const std::string&, prf::Matrix& m, TensorRole) {
    const auto v = prf::testing::random_vector(rng, m.size());
    std::copy(v.begin(), v.end(), m.values().begin());
  });
  EncoderParams adam = tiny_zeros(), lamb = tiny_zeros();
  OptimizerState sa = OptimizerState::for_params(adam), sl = OptimizerState::for_params(lamb);
  prf::optimizer_step(sa, adam, g, OptimizerKind::AdamW, 0.01);
  prf::optimizer_step(sl, lamb, g, OptimizerKind::Lamb, 0.01);
  EXPECT_EQ(flatten(adam), flatten(lamb));
}

TEST(Optimizer, LambTrustRatioOracle) {
  std::mt19937_64 rng(4);
  for (double sd : {0.3, 50.0}) {
    const EncoderParams start =
        prf::testing::dense_random_encoder(prf::testing::small_config(10, 8, 1, 2, 8), 5, sd);
    EncoderParams g = tiny_zeros();
    g.for_each_tensor([&](const std::string&, prf::Matrix& m, TensorRole) {
      const auto v = prf::testing::random_vector(rng, m.size());
      std::copy(v.begin(), v.end(), m.values().begin());
    });
    EncoderParams w = start;
    OptimizerState state = OptimizerState::for_params(w);
    state.weight_decay = 0.0;
    prf::optimizer_step(state, w, g, OptimizerKind::Lamb, 0.01);

    std::vector<std::vector<double>> grads, starts;
    g.for_each_tensor([&](const std::string&, const prf::Matrix& m, TensorRole) {
      grads.emplace_back(m.values().begin(), m.values().end());
    });
    start.for_each_tensor([&](const std::string&, const prf::Matrix& m, TensorRole) {
      starts.emplace_back(m.values().begin(), m.values().end());
    });
    std::size_t t = 0;
    bool clipped = false;
    w.for_each_tensor([&](const std::string& name, const prf::Matrix& m, TensorRole) {
      const auto& gi = grads[t];
      const auto& wi = starts[t++];
      // first step: m_hat = g, v_hat = g^2
      std::vector<double> u(gi.size());
      double wn = 0.0, un = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = gi[i] / (std::abs(gi[i]) + 1e-6);
        wn += wi[i] * wi[i];
        un += u[i] * u[i];
      }
      double ratio = std::sqrt(wn) / std::sqrt(un);
      if (ratio > 10.0) {
        ratio = 10.0;
        clipped = true;
      }
      for (std::size_t i = 0; i < u.size(); ++i) {
        EXPECT_NEAR(m.values()[i], wi[i] - 0.01 * ratio * u[i], 1e-12 * (1.0 + std::abs(wi[i])))
            << name;
      }
    });
    if (sd > 1.0) {
      EXPECT_TRUE(clipped);
    }
  }
}

TEST(Optimizer, RejectsNonFiniteGradients) {
  EncoderParams w = tiny_zeros();
  EncoderParams g = tiny_zeros();
  set_flat(g, 3, std::nan(""));
  OptimizerState state = OptimizerState::for_params(w);
  EXPECT_THROW(prf::optimizer_step(state, w, g, OptimizerKind::AdamW, 0.1), prf::Error);
}

// A run of `depth` docs "n1".."n<depth>" for q1, with n3 judged relevant.
struct NegFixture {
  prf::RunList run;
  prf::Qrels qrels;
  explicit NegFixture(int depth) {
    for (int r = 1; r <= depth; ++r) {
      run.entries.push_back({"q1", "n" + std::to_string(r), r, 100.0 - r, "t"});
    }
    qrels.add("q1", "n3", 1);
    qrels.add("q1", "n900", 2);
  }
};

TEST(SampleNegatives, TwentyOneFromTopTwoHundred) {
  NegFixture f(1000);
  const auto picked = prf::sample_negatives(f.run, f.qrels, "q1", 200, 21, 9);
  ASSERT_EQ(picked.size(), 21u);
  EXPECT_TRUE(std::is_sorted(picked.begin(), picked.end()));
  EXPECT_EQ(std::set<std::string>(picked.begin(), picked.end()).size(), 21u);
  for (const auto& id : picked) {
    EXPECT_NE(id, "n3");
    EXPECT_LE(std::stoi(id.substr(1)), 200);
  }
  EXPECT_EQ(prf::sample_negatives(f.run, f.qrels, "q1", 200, 21, 9), picked);
  EXPECT_NE(prf::sample_negatives(f.run, f.qrels, "q1", 200, 21, 10), picked);
}

TEST(SampleNegatives, WholeEligiblePool) {
  NegFixture f(10);
  const auto picked = prf::sample_negatives(f.run, f.qrels, "q1", 5, 4, 1);
  EXPECT_EQ(picked, (std::vector<std::string>{"n1", "n2", "n4", "n5"}));
}

TEST(SampleNegatives, RoughlyUniform) {
  NegFixture f(11);
  std::map<std::string, int> hits;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    for (const auto& id : prf::sample_negatives(f.run, f.qrels, "q1", 11, 3, seed)) ++hits[id];
  }
  ASSERT_EQ(hits.size(), 10u);
  for (const auto& [id, n] : hits) {
    EXPECT_GT(n, 450) << id;
    EXPECT_LT(n, 750) << id;
  }
}

TEST(SampleNegatives, Errors) {
  NegFixture f(10);
  try {
    prf::sample_negatives(f.run, f.qrels, "q1", 5, 5, 1);
    FAIL();
  } catch (const prf::Error& e) {
    EXPECT_STREQ(e.what(), "insufficient negatives");
  }
  EXPECT_THROW(prf::sample_negatives(f.run, f.qrels, "q1", 11, 2, 1), prf::InputError);
  EXPECT_THROW(prf::sample_negatives(f.run, f.qrels, "q9", 5, 2, 1), prf::InputError);
}

// Frozen random document vectors in an index plus 32 examples.
struct TrainFixture {
  prf::testing::GradFixture g = prf::testing::make_grad_fixture(21, 16, 1, 2, 32, 8);
  prf::VectorIndex index = build_index(g);

  static prf::VectorIndex build_index(const prf::testing::GradFixture& g) {
    std::vector<std::pair<std::string, prf::Embedding>> pairs;
    for (const auto& [id, v] : g.doc_vectors) pairs.emplace_back(id, prf::Embedding{v});
    std::sort(pairs.begin(), pairs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return prf::VectorIndex::build(std::move(pairs));
  }
};

TrainConfig one_epoch(int batch, int accum) {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = batch;
  cfg.grad_accum_steps = accum;
  cfg.epochs = 1;
  cfg.seed = 5;
  return cfg;
}

TEST(Train, AccumulationEquivalence) {
  const TrainFixture f;
  for (auto kind : {OptimizerKind::AdamW, OptimizerKind::Lamb}) {
    TrainConfig small = one_epoch(4, 8), big = one_epoch(32, 1);
    small.optimizer = big.optimizer = kind;
    const auto a = prf::train(f.g.batch, f.g.params, f.index, small);
    const auto b = prf::train(f.g.batch, f.g.params, f.index, big);
    ASSERT_EQ(a.log.size(), 1u);
    ASSERT_EQ(b.log.size(), 1u);
    const auto fa = flatten(a.params), fb = flatten(b.params);
    double worst = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) worst = std::max(worst, std::abs(fa[i] - fb[i]));
    EXPECT_LE(worst, 1e-10);
    EXPECT_NEAR(a.log[0].loss, b.log[0].loss, 1e-12);
    EXPECT_NE(fa, flatten(f.g.params));
  }
}

TEST(Train, ZeroLearningRateReturnsInitialisation) {
  const TrainFixture f;
  TrainConfig cfg = one_epoch(4, 2);
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  EXPECT_EQ(flatten(prf::train(f.g.batch, f.g.params, f.index, cfg).params), flatten(f.g.params));
  cfg.head_policy = prf::HeadPolicy::ReinitHead;
  EXPECT_EQ(flatten(prf::train(f.g.batch, f.g.params, f.index, cfg).params),
            flatten(prf::init_prf_encoder(f.g.params, prf::HeadPolicy::ReinitHead,
                                          prf::derive_seed(cfg.seed, "head"))));
}

TEST(Train, InBatchFlagIsInertAtBatchOne) {
  const TrainFixture f;
  TrainConfig off = one_epoch(1, 1), on = one_epoch(1, 1);
  on.in_batch_negatives = true;
  const auto a = prf::train(f.g.batch, f.g.params, f.index, off);
  const auto b = prf::train(f.g.batch, f.g.params, f.index, on);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
  EXPECT_EQ(flatten(a.params), flatten(b.params));
}

TEST(Train, InBatchNegativesChangeTheLoss) {
  const TrainFixture f;
  TrainConfig off = one_epoch(8, 1), on = one_epoch(8, 1);
  on.in_batch_negatives = true;
  EXPECT_NE(prf::train(f.g.batch, f.g.params, f.index, off).log[0].loss,
            prf::train(f.g.batch, f.g.params, f.index, on).log[0].loss);
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
  const TrainFixture f;
  TrainConfig cfg = one_epoch(8, 2);
  cfg.epochs = 2;
  const auto a = prf::train(f.g.batch, f.g.params, f.index, cfg);
  ::setenv("PRF_THREADS", "1", 1);
  const auto b = prf::train(f.g.batch, f.g.params, f.index, cfg);
  ::unsetenv("PRF_THREADS");
  EXPECT_EQ(flatten(a.params), flatten(b.params));
  EXPECT_EQ(a.epoch_mean_loss, b.epoch_mean_loss);
  cfg.seed = 6;
  EXPECT_NE(flatten(prf::train(f.g.batch, f.g.params, f.index, cfg).params), flatten(a.params));
}

TEST(Train, LogAndEpochMeans) {
  const TrainFixture f;
  TrainConfig cfg = one_epoch(5, 2);
  cfg.epochs = 3;
  const auto r = prf::train(f.g.batch, f.g.params, f.index, cfg);
  // 32 examples in microbatches of 5 grouped in pairs: 4 steps per epoch
  ASSERT_EQ(r.log.size(), 12u);
  EXPECT_EQ(r.log.back().step, 12);
  EXPECT_EQ(r.log.back().epoch, 2);
  ASSERT_EQ(r.epoch_mean_loss.size(), 3u);
  // first epoch mean equals the loss of the initial params over all examples
  TrainConfig zero = cfg;
  zero.learning_rate = 0.0;
  zero.epochs = 1;
  prf::LossConfig frozen;
  frozen.doc_side = prf::DocSide::Frozen;
  frozen.doc_embedding = [&f](const std::string& id) { return f.index.vector(id); };
  const double initial = prf::grad(f.g.params, f.g.batch, frozen).loss;
  EXPECT_NEAR(prf::train(f.g.batch, f.g.params, f.index, zero).epoch_mean_loss[0], initial, 1e-12);
}

TEST(Train, IndexUnchangedAndMissingDocsNamed) {
  const TrainFixture f;
  const auto before = f.index.checksum();
  prf::train(f.g.batch, f.g.params, f.index, one_epoch(8, 1));
  EXPECT_EQ(f.index.checksum(), before);

  auto data = f.g.batch;
  data[0].negative_doc_ids.push_back("ghost");
  try {
    prf::train(data, f.g.params, f.index, one_epoch(32, 1));
    FAIL();
  } catch (const prf::Error& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
  EXPECT_THROW(prf::train({}, f.g.params, f.index, one_epoch(8, 1)), prf::InputError);
}

TEST(TrainConfigJson, RoundTripAndErrors) {
  TrainConfig c;
  c.optimizer = OptimizerKind::Lamb;
  c.learning_rate = 1e-6;
  c.batch_size = 4;
  c.grad_accum_steps = 8;
  c.negative_pool_depth = 1000;
  c.in_batch_negatives = true;
  c.head_policy = prf::HeadPolicy::ReinitHead;
  c.seed = 99;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.optimizer, OptimizerKind::Lamb);

  const TrainConfig defaults = TrainConfig::from_json(nlohmann::json::object());
  EXPECT_EQ(defaults.learning_rate, 1e-5);
  EXPECT_EQ(defaults.batch_size, 32);
  EXPECT_EQ(defaults.negatives_per_query, 21);
  EXPECT_EQ(defaults.negative_pool_depth, 200);
  EXPECT_EQ(defaults.epochs, 10);
  EXPECT_FALSE(defaults.in_batch_negatives);

  EXPECT_THROW(TrainConfig::from_json({{"optimizer", "sgd"}}), prf::InputError);
  EXPECT_THROW(TrainConfig::from_json({{"batch_size", 0}}), prf::InputError);
  EXPECT_THROW(TrainConfig::from_json({{"learning_rate", -1.0}}), prf::InputError);
  EXPECT_THROW(TrainConfig::from_json({{"learnin_rate", 1.0}}), prf::InputError);
  EXPECT_THROW(TrainConfig::from_json({{"epochs", "ten"}}), prf::InputError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::array()), prf::InputError);
}

TEST(TrainLog, CsvFormat) {
  prf::testing::TempDir dir;
  const std::vector<prf::TrainLogEntry> log = {{1, 0, 0.5, 1e-5}, {2, 0, 0.25, 1e-5}};
  prf::write_train_log(log, dir / "log.csv");
  EXPECT_EQ(prf::testing::read_file(dir / "log.csv"), "step,loss,lr\n1,0.5,1e-05\n2,0.25,1e-05\n");
}

TEST(TrainingExamples, PositiveAndNegatives) {
  prf::Vocab vocab = prf::testing::small_vocab(10);
  const std::vector<prf::TextRecord> corpus = {{"a", "w1 w2"}, {"b", "w3"}, {"c", "w4 w5"},
                                               {"d", "w6"},    {"e", "w7"}};
  const prf::DocumentStore docs(corpus);
  const std::vector<prf::TextRecord> queries = {{"q1", "w0"}, {"q2", "w9"}};
  prf::RunList run;
  for (const char* q : {"q1", "q2"}) {
    int r = 1;
    for (const char* d : {"c", "a", "b", "d", "e"}) run.entries.push_back({q, d, r, 10.0 - r, "t"}), ++r;
  }
  prf::Qrels qrels;
  qrels.add("q1", "b", 2);
  qrels.add("q1", "a", 2);
  qrels.add("q1", "e", 1);
  qrels.add("q2", "d", 0);
  TrainConfig cfg;
  cfg.negative_pool_depth = 5;
  cfg.negatives_per_query = 2;
  const prf::PrfTemplate tmpl(prf::TemplateKind::AnceStyle, 16);
  const auto ex = prf::build_training_examples(queries, run, qrels, vocab, docs, prf::PrfDepth(2),
                                               tmpl, prf::CasePolicy::Preserve, cfg);
  std::vector<prf::SearchResult> ranked_q1;
  for (const auto& e : run.entries) {
    if (e.query_id == "q1") ranked_q1.push_back({e.doc_id, e.score, e.rank});
  }
  ASSERT_EQ(ex.size(), 1u);  // q2 has no relevant document
  EXPECT_EQ(ex[0].query_id, "q1");
  EXPECT_EQ(ex[0].positive_doc_id, "a");
  EXPECT_EQ(ex[0].negative_doc_ids, (std::vector<std::string>{"c", "d"}));
  EXPECT_EQ(ex[0].prf_query,
            prf::compose_feedback_query("w0", ranked_q1, vocab, docs,
                                        prf::PrfDepth(2), tmpl, prf::CasePolicy::Preserve));

  std::vector<prf::TrainingExample> data = ex;
  cfg.negatives_per_query = 1;
  const auto hook = prf::resample_negatives_each_epoch(run, qrels, cfg);
  std::set<std::string> seen;
  for (int epoch = 0; epoch < 20; ++epoch) {
    hook(epoch, data);
    ASSERT_EQ(data[0].negative_doc_ids.size(), 1u);
    seen.insert(data[0].negative_doc_ids[0]);
  }
  EXPECT_EQ(seen, (std::set<std::string>{"c", "d"}));
}

TEST(TrainSynthetic, LossDropsOverThreeEpochs) {
  namespace syn = prf::synthetic;
  const syn::Collection col = syn::make_collection(syn::CollectionConfig{});
  std::vector<std::string> texts;
  for (const auto& r : col.corpus) texts.push_back(r.text);
  const prf::Vocab vocab = prf::build_vocab(texts, 1);
  const EncoderParams base = syn::make_topic_encoder(vocab, syn::EncoderRecipe{});
  const prf::PrfTemplate tmpl(prf::TemplateKind::AnceStyle,
                              static_cast<std::size_t>(base.config.max_len));
  const auto policy = prf::CasePolicy::Preserve;
  const prf::VectorIndex index = prf::encode_corpus(col.corpus, vocab, base, tmpl, policy);
  const prf::DocumentStore docs(col.corpus);
  TrainConfig cfg;
  cfg.epochs = 3;
  const auto first = prf::run_first_round(col.train_queries, vocab, base, index,
                                          static_cast<std::size_t>(cfg.negative_pool_depth),
                                          policy, "first");
  const auto data = prf::build_training_examples(col.train_queries, first, col.qrels, vocab, docs,
                                                 prf::PrfDepth(3), tmpl, policy, cfg);
  ASSERT_EQ(data.size(), col.train_queries.size());
  const auto r = prf::train(data, base, index, cfg,
                            prf::resample_negatives_each_epoch(first, col.qrels, cfg));
  ASSERT_EQ(r.epoch_mean_loss.size(), 3u);
  EXPECT_LT(r.epoch_mean_loss.back(), r.epoch_mean_loss.front());
}

}  // namespace

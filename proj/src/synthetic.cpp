#include "prf/synthetic.hpp"

#include <cctype>
#include <cmath>
#include <optional>
#include <random>
#include <string>

#include "prf/error.hpp"
#include "prf/util.hpp"

namespace prf::synthetic {
namespace {

std::string topic_word(int topic, int n) {
  return "t" + std::to_string(topic) + "w" + std::to_string(n);
}

// Topic of a lowercase topic word, nullopt for anything else.
std::optional<int> topic_of(const std::string& token) {
  if (token.size() < 4 || token[0] != 't') return std::nullopt;
  const auto w = token.find('w');
  if (w == std::string::npos || w < 2 || w + 1 >= token.size()) return std::nullopt;
  for (std::size_t i = 1; i < token.size(); ++i) {
    if (i != w && !std::isdigit(static_cast<unsigned char>(token[i]))) return std::nullopt;
  }
  return std::stoi(token.substr(1, w - 1));
}

std::vector<double> gaussian(std::mt19937_64& rng, std::size_t dim, double sd) {
  std::normal_distribution<double> normal(0.0, sd);
  std::vector<double> v(dim);
  for (double& x : v) x = normal(rng);
  return v;
}

}  // namespace

Collection make_collection(const CollectionConfig& cfg) {
  if (cfg.topics < 2 || cfg.docs < cfg.topics || cfg.words_per_topic < 1 ||
      cfg.background_words < 1 || cfg.doc_length < 1) {
    throw InputError("invalid synthetic collection config");
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, "collection"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_topic(0, cfg.topics - 1);
  std::uniform_int_distribution<int> pick_word(0, cfg.words_per_topic - 1);
  std::uniform_int_distribution<int> pick_bg(0, cfg.background_words - 1);

  Collection c;
  std::vector<std::vector<std::string>> doc_topic_words(static_cast<std::size_t>(cfg.docs));
  for (int d = 0; d < cfg.docs; ++d) {
    const int topic = d % cfg.topics;
    c.doc_topic.push_back(topic);
    std::string text;
    for (int i = 0; i < cfg.doc_length; ++i) {
      const double r = unit(rng);
      std::string word;
      if (r < cfg.doc_topical_fraction) {
        word = topic_word(topic, pick_word(rng));
        doc_topic_words[static_cast<std::size_t>(d)].push_back(word);
        if (unit(rng) < cfg.capitalized_fraction) word[0] = 'T';
      } else if (r < cfg.doc_topical_fraction + cfg.doc_offtopic_fraction) {
        word = topic_word(pick_topic(rng), pick_word(rng));
      } else {
        word = "bg" + std::to_string(pick_bg(rng));
      }
      if (!text.empty()) text.push_back(' ');
      text += word;
    }
    c.corpus.push_back({"d" + std::to_string(d), std::move(text)});
  }

  std::uniform_int_distribution<int> pick_doc(0, cfg.docs - 1);
  const int total_queries = cfg.train_queries + cfg.eval_queries;
  for (int q = 0; q < total_queries; ++q) {
    int doc = pick_doc(rng);
    while (doc_topic_words[static_cast<std::size_t>(doc)].empty()) doc = pick_doc(rng);
    const int topic = c.doc_topic[static_cast<std::size_t>(doc)];
    const auto& own = doc_topic_words[static_cast<std::size_t>(doc)];
    std::uniform_int_distribution<std::size_t> pick_own(0, own.size() - 1);
    std::vector<std::string> words;
    for (int i = 0; i < cfg.query_topical_words; ++i) words.push_back(own[pick_own(rng)]);
    for (int i = 0; i < cfg.query_confuser_words; ++i) {
      int confuser = pick_topic(rng);
      while (confuser == topic) confuser = pick_topic(rng);
      words.push_back(topic_word(confuser, pick_word(rng)));
    }
    for (int i = 0; i < cfg.query_background_words; ++i) {
      words.push_back("bg" + std::to_string(pick_bg(rng)));
    }
    std::shuffle(words.begin(), words.end(), rng);
    std::string text;
    for (const auto& w : words) {
      if (!text.empty()) text.push_back(' ');
      text += w;
    }
    const std::string qid = "q" + std::to_string(q);
    (q < cfg.train_queries ? c.train_queries : c.eval_queries).push_back({qid, std::move(text)});
    for (int d = topic; d < cfg.docs; d += cfg.topics) {
      c.qrels.add(qid, "d" + std::to_string(d), d == doc ? 2 : 1);
    }
  }
  return c;
}

EncoderParams make_topic_encoder(const Vocab& vocab, const EncoderRecipe& recipe) {
  EncoderConfig shape = recipe.shape;
  shape.vocab_size = static_cast<std::int32_t>(vocab.size());
  EncoderParams p = random_encoder(shape, derive_seed(recipe.seed, "body"));
  const auto dim = static_cast<std::size_t>(shape.dim);

  std::mt19937_64 rng(derive_seed(recipe.seed, "embeddings"));
  std::vector<std::vector<double>> centroids;
  const double centroid_sd = recipe.topic_scale / std::sqrt(static_cast<double>(dim));
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    const auto topic = topic_of(vocab.token(static_cast<TokenId>(id)));
    if (!topic) continue;
    while (centroids.size() <= static_cast<std::size_t>(*topic)) {
      centroids.push_back(gaussian(rng, dim, centroid_sd));
    }
  }
  const double noise_sd = recipe.word_noise * centroid_sd;
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    auto row = p.token_embeddings.row(id);
    const auto topic = topic_of(vocab.token(static_cast<TokenId>(id)));
    const auto noise = gaussian(rng, dim, topic ? noise_sd : centroid_sd);
    for (std::size_t d = 0; d < dim; ++d) {
      row[d] = noise[d] + (topic ? centroids[static_cast<std::size_t>(*topic)][d] : 0.0);
    }
  }
  std::normal_distribution<double> small(0.0, 0.01 * centroid_sd);
  for (double& v : p.position_embeddings.values()) v = small(rng);
  for (std::size_t id = 0; id < special::kFirstRegularId; ++id) {
    for (double& v : p.token_embeddings.row(id)) v = small(rng);
  }

  for (auto& l : p.layers) {
    l.wv.fill(0.0);
    l.wo.fill(0.0);
    for (std::size_t i = 0; i < dim; ++i) {
      l.wv(i, i) = 1.0;
      l.wo(i, i) = 1.0;
    }
  }
  p.head.w.fill(0.0);
  for (std::size_t i = 0; i < dim; ++i) p.head.w(i, i) = 1.0;
  p.head.norm.gain.fill(recipe.head_gain);
  return p;
}

}  // namespace prf::synthetic

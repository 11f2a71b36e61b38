#pragma once

#include <cstdint>
#include <vector>

#include "prf/encoder.hpp"
#include "prf/evaluator.hpp"
#include "prf/pipeline.hpp"
#include "prf/tokenizer.hpp"

namespace prf::synthetic {

/// Topic-clustered toy collection. Topic words are spelled "t<topic>w<n>",
/// background words "bg<n>"; a capitalised topic word ("T3w7") is a distinct
/// token under CasePolicy::Preserve.
struct CollectionConfig {
  int topics = 30;
  int docs = 3000;
  int train_queries = 200;
  int eval_queries = 50;
  int words_per_topic = 40;
  int background_words = 300;
  int doc_length = 24;
  double doc_topical_fraction = 0.4;   // words drawn from the doc's own topic
  double doc_offtopic_fraction = 0.3;  // words drawn from random other topics
  int query_topical_words = 2;
  int query_confuser_words = 2;        // each from a random other topic
  int query_background_words = 1;
  double capitalized_fraction = 0.1;   // chance a document topic word is capitalised
  std::uint64_t seed = 7;
};

/// Qrels: grade 2 for the document a query was drawn from, grade 1 for the
/// rest of its topic.
struct Collection {
  std::vector<TextRecord> corpus;
  std::vector<TextRecord> train_queries;
  std::vector<TextRecord> eval_queries;
  Qrels qrels;
  std::vector<int> doc_topic;
};

Collection make_collection(const CollectionConfig& cfg);

struct EncoderRecipe {
  EncoderConfig shape;            // vocab_size is taken from the vocabulary
  double topic_scale = 1.0;       // norm scale of topic centroids
  double word_noise = 1.0;        // per-word deviation from its centroid
  double head_gain = 0.4;         // head norm gain; sets the score scale
  std::uint64_t seed = 11;
};

/// A base encoder whose token embeddings cluster by topic and whose blocks
/// start close to mean pooling (near-uniform attention, identity value path),
/// so that first-round retrieval is meaningful without pretraining.
EncoderParams make_topic_encoder(const Vocab& vocab, const EncoderRecipe& recipe);

}  // namespace prf::synthetic

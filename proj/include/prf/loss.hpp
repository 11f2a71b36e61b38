#pragma once

#include <span>
#include <string>
#include <vector>

#include "prf/tokenizer.hpp"

namespace prf {

/// One query's training signal: the composed feedback query, its relevant
/// document and the sampled irrelevant ones.
struct TrainingExample {
  std::string query_id;
  TokenSequence prf_query;
  std::string positive_doc_id;
  std::vector<std::string> negative_doc_ids;
};

/// Contrastive loss over raw scores together with its derivative with respect
/// to every score. d_positive = p+ - 1, d_negatives[j] = p_j where p is the
/// softmax over [positive, negatives...].
struct ScoreLoss {
  double loss = 0.0;
  double d_positive = 0.0;
  std::vector<double> d_negatives;
};

/// -log(exp(s+) / (exp(s+) + sum exp(s-))) with max-shift stabilisation.
/// Throws prf::Error on non-finite scores or an empty negative list.
ScoreLoss nce_from_scores(double positive, std::span<const double> negatives);

double nce_loss(std::span<const double> query, std::span<const double> positive,
                std::span<const std::vector<double>> negatives);

}  // namespace prf

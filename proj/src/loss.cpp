#include "prf/loss.hpp"

#include <algorithm>
#include <cmath>

#include "prf/encoder.hpp"
#include "prf/error.hpp"

namespace prf {

ScoreLoss nce_from_scores(double positive, std::span<const double> negatives) {
  if (negatives.empty()) throw InputError("contrastive loss needs at least one negative");
  double mx = positive;
  bool finite = std::isfinite(positive);
  for (double s : negatives) {
    finite = finite && std::isfinite(s);
    mx = std::max(mx, s);
  }
  if (!finite) throw Error("non-finite score in contrastive loss");

  // Sum of exp(s - mx) over the negatives; the positive contributes
  // exp(positive - mx) separately so that log1p keeps precision when the
  // positive dominates.
  std::vector<double> shifted(negatives.size());
  double neg_sum = 0.0;
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    shifted[j] = std::exp(negatives[j] - mx);
    neg_sum += shifted[j];
  }
  const double pos_term = std::exp(positive - mx);
  const double total = pos_term + neg_sum;

  ScoreLoss out;
  if (positive == mx) {
    out.loss = std::log1p(neg_sum);
  } else {
    out.loss = (mx - positive) + std::log(total);
  }
  out.d_positive = -neg_sum / total;
  out.d_negatives.resize(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) out.d_negatives[j] = shifted[j] / total;
  return out;
}

double nce_loss(std::span<const double> query, std::span<const double> positive,
                std::span<const std::vector<double>> negatives) {
  std::vector<double> neg_scores;
  neg_scores.reserve(negatives.size());
  for (const auto& n : negatives) neg_scores.push_back(score(query, n));
  return nce_from_scores(score(query, positive), neg_scores).loss;
}

}  // namespace prf

#pragma once

#include <span>
#include <vector>

#include "pkws/openset/classifier.hpp"

namespace pkws::eval {

using openset::ScoreVector;

/// A scored test utterance; `label` is 0 for negatives, 1..N for keywords.
struct Outcome {
  int label = 0;
  ScoreVector p;
};

struct Metrics {
  double acc = 0.0;  // positives decided as their own keyword
  double frr = 0.0;  // positives decided unknown
  double far = 0.0;  // negatives decided as any keyword
};

/// Fraction of negatives accepted (decide != 0) at threshold gamma.
double false_acceptance_rate(std::span<const ScoreVector> negatives, double gamma);

/// Smallest gamma from {0} U {max_{i>=1} p_i of each negative} U {1} whose FAR
/// on `negatives` is <= far_target. If even gamma = 1 accepts too many
/// (probabilities of exactly 1), returns the next double above 1, which
/// rejects everything. Throws ValidationError unless 0 < far_target < 1.
double tune_gamma(std::span<const ScoreVector> negatives, double far_target);

/// Throws ValidationError on an empty positive or negative set.
Metrics compute_metrics(std::span<const Outcome> positives, std::span<const ScoreVector> negatives, double gamma);

/// Mann-Whitney estimate of P(positive > negative), ties counted 1/2.
/// Throws ValidationError on an empty list.
double auroc(std::span<const double> positive_scores, std::span<const double> negative_scores);

}  // namespace pkws::eval

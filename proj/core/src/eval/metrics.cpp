#include "pkws/eval/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "pkws/error.hpp"

namespace pkws::eval {

double false_acceptance_rate(std::span<const ScoreVector> negatives, double gamma) {
  if (negatives.empty()) throw ValidationError("FAR needs at least one negative");
  std::size_t accepted = 0;
  for (const auto& p : negatives) accepted += openset::decide(p, gamma) != 0;
  return static_cast<double>(accepted) / static_cast<double>(negatives.size());
}

double tune_gamma(std::span<const ScoreVector> negatives, double far_target) {
  if (!(far_target > 0.0 && far_target < 1.0)) throw ValidationError("FAR target must lie in (0, 1)");
  if (negatives.empty()) throw ValidationError("gamma tuning needs at least one negative");
  std::vector<double> candidates{0.0, 1.0};
  for (const auto& p : negatives) {
    if (openset::decide(p, 0.0) != 0) candidates.push_back(openset::detection_score(p));
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  // FAR is nonincreasing in gamma, so the first admissible candidate is the smallest.
  for (double g : candidates) {
    if (false_acceptance_rate(negatives, g) <= far_target) return g;
  }
  return std::nextafter(1.0, 2.0);
}

Metrics compute_metrics(std::span<const Outcome> positives, std::span<const ScoreVector> negatives, double gamma) {
  if (positives.empty()) throw ValidationError("metrics need at least one positive");
  Metrics m;
  std::size_t correct = 0, rejected = 0;
  for (const auto& o : positives) {
    const int y = openset::decide(o.p, gamma);
    correct += y == o.label;
    rejected += y == 0;
  }
  const auto n = static_cast<double>(positives.size());
  m.acc = static_cast<double>(correct) / n;
  m.frr = static_cast<double>(rejected) / n;
  m.far = false_acceptance_rate(negatives, gamma);
  return m;
}

double auroc(std::span<const double> positive_scores, std::span<const double> negative_scores) {
  if (positive_scores.empty() || negative_scores.empty()) throw ValidationError("AUROC needs positives and negatives");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(positive_scores.size() + negative_scores.size());
  for (double s : positive_scores) all.push_back({s, true});
  for (double s : negative_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  // Average ranks over tie groups; rank-sum of positives gives U.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t pos = 0;
    while (j < all.size() && all[j].score == all[i].score) pos += all[j++].positive;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += avg_rank * static_cast<double>(pos);
    i = j;
  }
  const auto np = static_cast<double>(positive_scores.size());
  const auto nn = static_cast<double>(negative_scores.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace pkws::eval

#pragma once

#include <span>

namespace pkws::openset {

/// Weibull CDF on shifted distances, w(d) = 1 - exp(-((d - shift)/scale)^shape)
/// for d > shift and 0 otherwise. A degenerate model (all fitted distances
/// equal) is the step w(d) = [d > step_at].
struct WeibullTail {
  double shape = 1.0;
  double scale = 1.0;
  double shift = 0.0;
  bool degenerate = false;
  double step_at = 0.0;

  double cdf(double d) const noexcept;
};

/// Maximum-likelihood fit on (d - shift) with shift = min(d) * (1 - 1e-6).
/// The shape solves the profile-likelihood equation by safeguarded Newton
/// (bisection fallback, 200 iterations, tolerance 1e-10); the scale follows in
/// closed form. Needs >= 2 finite, non-negative distances (ValidationError
/// otherwise); all-equal input yields the degenerate step model.
WeibullTail fit_weibull_tail(std::span<const double> distances);

}  // namespace pkws::openset

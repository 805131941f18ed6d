#include "pkws/openset/weibull.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "pkws/error.hpp"

namespace pkws::openset {

double WeibullTail::cdf(double d) const noexcept {
  if (degenerate) return d > step_at ? 1.0 : 0.0;
  if (!(d > shift)) return 0.0;
  return -std::expm1(-std::pow((d - shift) / scale, shape));
}

namespace {

// Profile score for the shape k (increasing in k):
//   g(k) = sum x^k ln x / sum x^k - 1/k - mean(ln x),  g'(k) = var_w(ln x) + 1/k^2
// with weights x^k / sum x^k. Inputs are pre-scaled so max(x) = 1.
struct ShapeEquation {
  std::vector<double> logs;
  double mean_log = 0.0;

  void eval(double k, double& g, double& dg) const {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    for (double l : logs) {
      const double w = std::exp(k * l);
      s0 += w;
      s1 += w * l;
      s2 += w * l * l;
    }
    const double m1 = s1 / s0;
    g = m1 - 1.0 / k - mean_log;
    dg = (s2 / s0 - m1 * m1) + 1.0 / (k * k);
  }
};

}  // namespace

WeibullTail fit_weibull_tail(std::span<const double> distances) {
  if (distances.size() < 2) throw ValidationError("Weibull fit needs at least 2 distances");
  for (double d : distances) {
    if (!std::isfinite(d) || d < 0.0) throw ValidationError("Weibull fit needs finite non-negative distances");
  }
  const auto [lo_it, hi_it] = std::minmax_element(distances.begin(), distances.end());
  const double dmin = *lo_it, dmax = *hi_it;
  WeibullTail tail;
  if (dmax == dmin) {
    tail.degenerate = true;
    tail.step_at = dmin;
    tail.shift = dmin;
    return tail;
  }
  tail.shift = dmin * (1.0 - 1e-6);

  const double xmax = dmax - tail.shift;
  ShapeEquation eq;
  eq.logs.reserve(distances.size());
  for (double d : distances) {
    const double x = d - tail.shift;
    // dmin == 0 leaves one exact zero; it carries no likelihood mass at any k > 0.
    eq.logs.push_back(x > 0.0 ? std::log(x / xmax) : -745.0);
  }
  double sum = 0.0;
  for (double l : eq.logs) sum += l;
  eq.mean_log = sum / static_cast<double>(eq.logs.size());

  double lo = 1e-3, hi = 1.0, g = 0.0, dg = 0.0;
  eq.eval(lo, g, dg);
  while (g > 0.0 && lo > 1e-12) {
    lo *= 0.1;
    eq.eval(lo, g, dg);
  }
  eq.eval(hi, g, dg);
  while (g < 0.0 && hi < 1e6) {
    hi *= 2.0;
    eq.eval(hi, g, dg);
  }
  double k = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    eq.eval(k, g, dg);
    if (g > 0.0) {
      hi = k;
    } else {
      lo = k;
    }
    double next = k - g / dg;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const bool done = std::abs(next - k) <= 1e-10 * std::max(1.0, k) || (hi - lo) <= 1e-10 * std::max(1.0, k);
    k = next;
    if (done) break;
  }
  if (!(k > 0.0) || !std::isfinite(k)) throw NumericError("Weibull shape fit failed to converge");

  double s = 0.0;
  for (double l : eq.logs) s += std::exp(k * l);
  tail.shape = k;
  tail.scale = xmax * std::pow(s / static_cast<double>(eq.logs.size()), 1.0 / k);
  if (!(tail.scale > 0.0) || !std::isfinite(tail.scale)) throw NumericError("Weibull scale fit failed");
  return tail;
}

}  // namespace pkws::openset

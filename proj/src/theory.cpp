#include "scssl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "scssl/random.hpp"

namespace scssl::theory {

namespace {

constexpr double kSeriesCutoff = 3.0;

// erf(z) for 0 <= z < 3. Every term is positive so there is no cancellation.
double erf_series(double z) {
  const double z2 = z * z;
  double term = z;
  double sum = z;
  for (int n = 1; n < 200; ++n) {
    term *= 2.0 * z2 / (2.0 * n + 1.0);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-z2) * sum;
}

// erfc(z) for z >= 3 via the continued fraction
//   erfc(z) = exp(-z^2)/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
// evaluated with the modified Lentz algorithm.
double erfc_continued_fraction(double z) {
  constexpr double tiny = 1e-300;
  double f = z;
  double c = z;
  double d = 0.0;
  for (int n = 1; n < 500; ++n) {
    const double a = 0.5 * n;
    d = z + a * d;
    if (std::abs(d) < tiny) d = tiny;
    c = z + a / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-z * z) / std::sqrt(std::numbers::pi) / f;
}

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

double erfc_nonnegative(double z) {
  if (!(z >= 0.0)) throw std::invalid_argument("erfc_nonnegative: z must be >= 0");
  if (std::isinf(z)) return 0.0;
  if (z < kSeriesCutoff) return 1.0 - erf_series(z);
  return erfc_continued_fraction(z);
}

double standard_normal_cdf(double x) {
  if (!std::isfinite(x)) {
    throw std::invalid_argument("standard_normal_cdf: non-finite input");
  }
  const double tail = 0.5 * erfc_nonnegative(std::abs(x) / std::numbers::sqrt2);
  return x < 0.0 ? tail : 1.0 - tail;
}

void BinaryMixtureSpec::validate() const {
  require(std::isfinite(gamma) && gamma > 0.5 && gamma < 1.0,
          "BinaryMixtureSpec: gamma must lie in (0.5, 1)");
  require(std::isfinite(rho) && rho > 0.5 && rho < 1.0,
          "BinaryMixtureSpec: rho must lie in (0.5, 1)");
  require(std::isfinite(sigma1) && sigma1 > 0.0, "BinaryMixtureSpec: sigma1 must be > 0");
  require(std::isfinite(sigma2) && sigma2 > 0.0, "BinaryMixtureSpec: sigma2 must be > 0");
  require(std::isfinite(beta) && beta > 0.0, "BinaryMixtureSpec: beta must be > 0");
  require(std::isfinite(mu1) && std::isfinite(mu2) && mu2 > mu1,
          "BinaryMixtureSpec: mu2 must exceed mu1");
  require(std::isfinite(delta_p), "BinaryMixtureSpec: delta_p must be finite");
}

PseudoLabelProbabilities pseudo_label_probabilities(const BinaryMixtureSpec& spec) {
  spec.validate();
  const double half_gap = 0.5 * (spec.mu2 - spec.mu1);
  const double margin = std::log(spec.rho / (1.0 - spec.rho)) / spec.beta;
  const double g = spec.gamma;
  const double dp = spec.delta_p;

  // Positive decision: x > (mu1+mu2)/2 + margin + delta_p.
  const double p_pos = g * standard_normal_cdf((half_gap - margin - dp) / spec.sigma2) +
                       (1.0 - g) * standard_normal_cdf((-half_gap - margin - dp) / spec.sigma1);
  // Negative decision: x < (mu1+mu2)/2 - margin + delta_p.
  const double p_neg = (1.0 - g) * standard_normal_cdf((half_gap - margin + dp) / spec.sigma1) +
                       g * standard_normal_cdf((-half_gap - margin + dp) / spec.sigma2);

  PseudoLabelProbabilities out;
  out.p_pos = p_pos;
  out.p_neg = p_neg;
  // rho > 1/2 orders the two cut points, so the events are disjoint and this
  // cannot go negative beyond rounding.
  out.p_mask = std::max(0.0, 1.0 - p_pos - p_neg);
  return out;
}

PseudoLabelProbabilities monte_carlo_pseudo_label_probabilities(
    const BinaryMixtureSpec& spec, std::int64_t n_samples, std::uint64_t seed) {
  spec.validate();
  if (n_samples < 1) {
    throw std::invalid_argument("monte_carlo_pseudo_label_probabilities: n_samples must be >= 1");
  }
  Rng rng(seed);
  const double midpoint = 0.5 * (spec.mu1 + spec.mu2);
  std::int64_t pos = 0;
  std::int64_t neg = 0;
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const bool positive = rng.uniform() < spec.gamma;
    const double z = rng.normal();
    const double x = positive ? spec.mu2 + spec.sigma2 * z : spec.mu1 + spec.sigma1 * z;
    const double s = 1.0 / (1.0 + std::exp(-spec.beta * ((x - spec.delta_p) - midpoint)));
    if (s > spec.rho) {
      ++pos;
    } else if (s < 1.0 - spec.rho) {
      ++neg;
    }
  }
  const double n = static_cast<double>(n_samples);
  PseudoLabelProbabilities out;
  out.p_pos = static_cast<double>(pos) / n;
  out.p_neg = static_cast<double>(neg) / n;
  out.p_mask = static_cast<double>(n_samples - pos - neg) / n;
  return out;
}

double denoising_bound(double expansion_factor, double violation_rate) {
  if (!(expansion_factor > 3.0) || !std::isfinite(expansion_factor)) {
    throw std::invalid_argument("denoising_bound: expansion factor must exceed 3");
  }
  if (!(violation_rate >= 0.0 && violation_rate <= 1.0)) {
    throw std::invalid_argument("denoising_bound: violation rate must lie in [0, 1]");
  }
  return 2.0 * expansion_factor / (expansion_factor - 3.0) * violation_rate;
}

}  // namespace scssl::theory

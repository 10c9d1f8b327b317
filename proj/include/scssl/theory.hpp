#pragma once

#include <cstdint>

namespace scssl::theory {

/// Standard normal CDF.
///
/// Computed from an in-repo erfc: a positive-term series
///   erf(z) = 2/sqrt(pi) * exp(-z^2) * sum_n (2z^2)^n z / (1*3*...*(2n+1))
/// for z < 3 and a Lentz continued fraction for erfc beyond that. Only exp
/// is taken from the platform. Absolute error is below 1e-15 on |x| <= 8 and
/// Phi(-x) + Phi(x) == 1 up to one rounding. Throws on non-finite input.
double standard_normal_cdf(double x);

/// Complementary error function backing standard_normal_cdf. z >= 0 only.
double erfc_nonnegative(double z);

/// Two-Gaussian pseudo-labeling model.
///
/// Y = +1 with probability gamma. X | Y=-1 ~ N(mu1, sigma1^2) and
/// X | Y=+1 ~ N(mu2, sigma2^2). The classifier scores
///   s(x) = 1 / (1 + exp(-beta * ((x - delta_p) - (mu1 + mu2) / 2)))
/// and labels +1 if s > rho, -1 if s < 1 - rho, 0 otherwise.
struct BinaryMixtureSpec {
  double gamma = 0.7;
  double mu1 = -1.0;
  double mu2 = 1.0;
  double sigma1 = 1.0;
  double sigma2 = 1.0;
  double beta = 4.0;
  double rho = 0.95;
  double delta_p = 0.0;

  /// Throws std::invalid_argument if any invariant is violated.
  void validate() const;
};

struct PseudoLabelProbabilities {
  double p_pos = 0.0;
  double p_neg = 0.0;
  double p_mask = 0.0;
};

/// Closed-form pseudo-label distribution of the binary mixture model.
PseudoLabelProbabilities pseudo_label_probabilities(const BinaryMixtureSpec& spec);

/// Brute-force estimate of the same distribution from n_samples draws.
/// Bit-identical for a fixed seed (see Rng for the stream definition).
PseudoLabelProbabilities monte_carlo_pseudo_label_probabilities(
    const BinaryMixtureSpec& spec, std::int64_t n_samples, std::uint64_t seed);

/// Pseudo-label denoising bound 2c/(c-3) * mu. Requires c > 3, mu in [0, 1].
double denoising_bound(double expansion_factor, double violation_rate);

}  // namespace scssl::theory

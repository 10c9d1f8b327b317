#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <limits>

#include "scssl/random.hpp"
#include "scssl/theory.hpp"

using namespace scssl;
using namespace scssl::theory;

namespace {

struct CdfCase {
  double x;
  double phi;
};

// High-precision reference values (50-digit arithmetic).
constexpr CdfCase kCdfTable[] = {
    {0.0, 0.5},
    {1.959964, 0.9750000009035575957},
    {1.0, 0.84134474606854294859},
    {-1.0, 0.15865525393145705141},
    {2.5, 0.99379033467422386483},
    {-3.0, 0.0013498980316300945267},
    {-5.0, 2.8665157187919391167e-7},
    {-8.0, 6.2209605742717841235e-16},
    {6.0, 0.99999999901341235496},
    {0.3, 0.61791142218895263731},
    {-0.7, 0.24196365222307301475},
    {4.0, 0.99996832875816688008},
};

BinaryMixtureSpec random_spec(Rng& rng) {
  BinaryMixtureSpec s;
  s.gamma = 0.51 + 0.48 * rng.uniform();
  s.mu1 = -2.0 * rng.uniform();
  s.mu2 = s.mu1 + 0.2 + 3.0 * rng.uniform();
  s.sigma1 = 0.3 + 2.0 * rng.uniform();
  s.sigma2 = 0.3 + 2.0 * rng.uniform();
  s.beta = 0.2 + 8.0 * rng.uniform();
  s.rho = 0.51 + 0.48 * rng.uniform();
  s.delta_p = -2.0 + 4.0 * rng.uniform();
  return s;
}

}  // namespace

TEST_SUITE("theory") {
  TEST_CASE("normal cdf against the reference table") {
    for (const auto& c : kCdfTable) {
      CAPTURE(c.x);
      const double got = standard_normal_cdf(c.x);
      CHECK(std::abs(got - c.phi) <= 1e-15 + 1e-13 * c.phi);
    }
    CHECK(standard_normal_cdf(-8.0) <= 1e-15);
  }

  TEST_CASE("normal cdf agrees with std::erfc and is symmetric and monotone") {
    double prev = 0.0;
    for (double x = -8.0; x <= 8.0; x += 0.01) {
      const double got = standard_normal_cdf(x);
      const double ref = 0.5 * std::erfc(-x / std::sqrt(2.0));
      CHECK(std::abs(got - ref) <= 1e-14);
      CHECK(std::abs(standard_normal_cdf(-x) - (1.0 - got)) <= 1e-12);
      CHECK(got >= prev);
      prev = got;
    }
  }

  TEST_CASE("normal cdf rejects non-finite input") {
    CHECK_THROWS_AS(standard_normal_cdf(std::numeric_limits<double>::quiet_NaN()),
                    std::invalid_argument);
    CHECK_THROWS_AS(standard_normal_cdf(std::numeric_limits<double>::infinity()),
                    std::invalid_argument);
  }

  TEST_CASE("closed form reference values") {
    struct Case {
      BinaryMixtureSpec spec;
      PseudoLabelProbabilities want;
    };
    const Case cases[] = {
        {{0.7, -1, 1, 1, 1, 4, 0.95, 0}, {0.435229095072468, 0.210110878360845, 0.354660026566688}},
        {{0.7, -1, 1, 1, 1, 2, 0.999, 0},
         {0.00495453012579438, 0.00212578519641261, 0.992919684677793}},
        {{0.7, -1, 1, 1, 1.5, 1, 0.75, 0.5},
         {0.242847337598026, 0.297068970849782, 0.460083691552192}},
    };
    for (const auto& c : cases) {
      const auto got = pseudo_label_probabilities(c.spec);
      CHECK(got.p_pos == doctest::Approx(c.want.p_pos).epsilon(1e-12));
      CHECK(got.p_neg == doctest::Approx(c.want.p_neg).epsilon(1e-12));
      CHECK(got.p_mask == doctest::Approx(c.want.p_mask).epsilon(1e-12));
    }
    // Large rho widens the abstention band.
    CHECK(pseudo_label_probabilities({0.7, -1, 1, 1, 1, 2, 0.999, 0}).p_mask > 0.9);
  }

  TEST_CASE("near-degenerate symmetric mixture splits evenly") {
    BinaryMixtureSpec s{0.5 + 1e-12, -1, 1, 1, 1, 1e9, 0.5 + 1e-12, 0};
    const auto p = pseudo_label_probabilities(s);
    CHECK(p.p_pos == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(p.p_neg == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(p.p_mask < 1e-6);
  }

  TEST_CASE("closure over random specs") {
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
      const auto p = pseudo_label_probabilities(random_spec(rng));
      CHECK(std::abs(p.p_pos + p.p_neg + p.p_mask - 1.0) <= 1e-12);
      for (double v : {p.p_pos, p.p_neg, p.p_mask}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  TEST_CASE("monotonicity over random ordered pairs") {
    Rng rng(17);
    int checked = 0;
    for (int i = 0; i < 200; ++i) {
      auto a = random_spec(rng);
      // Monotonicity in gamma needs equal class variances; see the next case.
      auto b = a;
      b.sigma2 = b.sigma1;
      auto hi = b;
      hi.gamma = b.gamma + (0.99 - b.gamma) * rng.uniform();
      CHECK(pseudo_label_probabilities(hi).p_pos >= pseudo_label_probabilities(b).p_pos - 1e-12);
      b = a;
      b.delta_p = a.delta_p + 2.0 * rng.uniform();
      const auto pa = pseudo_label_probabilities(a), pb = pseudo_label_probabilities(b);
      CHECK(pb.p_pos <= pa.p_pos + 1e-12);
      CHECK(pb.p_neg >= pa.p_neg - 1e-12);
      b = a;
      b.rho = a.rho + (0.999 - a.rho) * rng.uniform();
      CHECK(pseudo_label_probabilities(b).p_mask >= pseudo_label_probabilities(a).p_mask - 1e-12);
      ++checked;
    }
    CHECK(checked >= 100);
  }

  TEST_CASE("unequal variances can break monotonicity in gamma") {
    // A wide negative class puts more mass above the positive cut than a
    // narrow positive class does, so shifting prior toward +1 lowers p_pos.
    BinaryMixtureSpec lo{0.6, -1, 1, 3, 0.3, 4, 0.99, 0.5};
    BinaryMixtureSpec hi = lo;
    hi.gamma = 0.9;
    CHECK(pseudo_label_probabilities(hi).p_pos < pseudo_label_probabilities(lo).p_pos);
  }

  TEST_CASE("rho approaching one masks everything") {
    BinaryMixtureSpec s;
    s.rho = 1.0 - 1e-12;
    const auto p = pseudo_label_probabilities(s);
    CHECK(p.p_mask > 0.999);
  }

  TEST_CASE("spec validation") {
    BinaryMixtureSpec s;
    s.gamma = 0.5;
    CHECK_THROWS_AS(pseudo_label_probabilities(s), std::invalid_argument);
    s = {};
    s.rho = 1.0;
    CHECK_THROWS_AS(pseudo_label_probabilities(s), std::invalid_argument);
    s = {};
    s.mu2 = s.mu1;
    CHECK_THROWS_AS(pseudo_label_probabilities(s), std::invalid_argument);
    s = {};
    s.sigma1 = 0.0;
    CHECK_THROWS_AS(pseudo_label_probabilities(s), std::invalid_argument);
    s = {};
    s.beta = -1.0;
    CHECK_THROWS_AS(pseudo_label_probabilities(s), std::invalid_argument);
  }

  TEST_CASE("Monte Carlo oracle agrees within the binomial bound and is deterministic") {
    BinaryMixtureSpec s{0.7, -1, 1, 1, 1.5, 1, 0.75, 0.5};
    const std::int64_t n = 200000;
    const auto a = pseudo_label_probabilities(s);
    const auto m = monte_carlo_pseudo_label_probabilities(s, n, 42);
    auto bound = [&](double p) { return 4.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n)); };
    CHECK(std::abs(a.p_pos - m.p_pos) <= bound(a.p_pos));
    CHECK(std::abs(a.p_neg - m.p_neg) <= bound(a.p_neg));
    CHECK(std::abs(a.p_mask - m.p_mask) <= bound(a.p_mask));
    const auto again = monte_carlo_pseudo_label_probabilities(s, n, 42);
    CHECK(again.p_pos == m.p_pos);
    CHECK(again.p_neg == m.p_neg);
    CHECK(again.p_mask == m.p_mask);
    const auto other = monte_carlo_pseudo_label_probabilities(s, n, 43);
    CHECK(other.p_pos != m.p_pos);
  }

  TEST_CASE("denoising bound") {
    CHECK(denoising_bound(4.0, 0.1) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(denoising_bound(6.0, 0.0) == 0.0);
    CHECK_THROWS_AS(denoising_bound(3.0, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(denoising_bound(5.0, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(denoising_bound(5.0, -0.1), std::invalid_argument);
  }
}

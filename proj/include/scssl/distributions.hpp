#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scssl {

enum class DistributionKind { consist, uniform, inverse, gaussian, gaussian_inverse, custom };

std::string_view to_string(DistributionKind kind);
/// Accepts "consist", "uniform", "inverse", "gaussian", "gaussian-inverse",
/// "custom". Throws std::invalid_argument otherwise.
DistributionKind parse_distribution_kind(std::string_view name);

/// Per-class mass over K classes, either integer counts or proportions.
///
/// Classes are indexed in descending labeled-count order, so index 0 is the
/// most frequent labeled class.
class ClassDistribution {
 public:
  static ClassDistribution from_counts(std::vector<std::int64_t> counts,
                                       DistributionKind kind = DistributionKind::custom);
  /// Normalizes the input; throws if any entry is negative or all are zero.
  static ClassDistribution from_proportions(std::vector<double> weights,
                                            DistributionKind kind = DistributionKind::custom);

  std::size_t num_classes() const noexcept { return mass_.size(); }
  DistributionKind kind() const noexcept { return kind_; }
  bool has_counts() const noexcept { return has_counts_; }

  /// Raw mass: counts when has_counts(), proportions otherwise.
  std::span<const double> mass() const noexcept { return mass_; }
  double total() const noexcept;
  std::vector<double> proportions() const;
  /// Throws std::logic_error when the distribution holds proportions.
  std::vector<std::int64_t> counts() const;

  bool operator==(const ClassDistribution&) const = default;

 private:
  ClassDistribution(std::vector<double> mass, DistributionKind kind, bool has_counts);

  std::vector<double> mass_;
  DistributionKind kind_ = DistributionKind::custom;
  bool has_counts_ = false;
};

/// How the Gaussian anchor's width parameter K/6 is read.
enum class GaussianWidth { std_dev, variance };

/// counts[k] = max(1, round(n_max * gamma^(-k/(K-1)))).
ClassDistribution make_longtail(std::size_t num_classes, std::int64_t n_max, double gamma);
ClassDistribution make_uniform(std::size_t num_classes, std::int64_t per_class);
/// Proportions proportional to exp(-(k - (K-1)/2)^2 / (2 s^2)) with s = K/6
/// (or s = sqrt(K/6) for GaussianWidth::variance). `inverted` permutes the
/// same values by reversed rank, giving a valley with the same imbalance ratio.
ClassDistribution make_gaussian_anchor(std::size_t num_classes, bool inverted,
                                       GaussianWidth width = GaussianWidth::std_dev);
/// Integer counts approximating the given proportions, total size `total`
/// (each class at least 1).
ClassDistribution counts_from_proportions(const ClassDistribution& shape, std::int64_t total);

/// Reverses the class order. A consist/gaussian tag flips to inverse and back.
ClassDistribution invert(const ClassDistribution& dist);

/// max / min. Throws if any class has zero mass.
double imbalance_ratio(const ClassDistribution& dist);
double imbalance_ratio(std::span<const double> mass);

/// True for the first ceil(K/2) classes.
std::vector<bool> head_mask(std::size_t num_classes);

/// Q_k = p_k * sum(estimated) / sum(p).
std::vector<double> rescale_anchor(std::span<const double> anchor,
                                   std::span<const double> estimated);

inline constexpr double kKlSmoothing = 1e-6;

/// KL(estimated || rescaled) after adding kKlSmoothing to every category of
/// both arguments and normalizing. Natural log.
double kl_divergence(std::span<const double> estimated, std::span<const double> rescaled);

struct Anchor {
  std::string name;
  ClassDistribution distribution;
  int expansion_factor = 4;
};

/// Ordered list of candidate unlabeled distributions with their expansion
/// factors.
class AnchorSet {
 public:
  AnchorSet() = default;
  explicit AnchorSet(std::vector<Anchor> anchors);

  /// consist(gamma), uniform, inverse(gamma), gaussian, gaussian-inverse with
  /// c = 4, 5, 6, 4, 6.
  static AnchorSet standard(std::size_t num_classes, double gamma = 100.0,
                            GaussianWidth width = GaussianWidth::std_dev);

  std::span<const Anchor> anchors() const noexcept { return anchors_; }
  std::size_t size() const noexcept { return anchors_.size(); }
  const Anchor& operator[](std::size_t i) const { return anchors_.at(i); }

 private:
  std::vector<Anchor> anchors_;
};

struct AnchorMatch {
  std::size_t index = 0;
  int expansion_factor = 0;
  double gamma_u = 1.0;
  /// KL divergence per anchor, in anchor order.
  std::vector<double> divergences;
  /// Rescaled counts Q of the selected anchor.
  std::vector<double> rescaled;
};

/// argmin over anchors of KL(N^e || rescale(anchor, N^e)); ties go to the
/// lowest index.
AnchorMatch match_anchor(std::span<const double> estimated, const AnchorSet& anchors);

}  // namespace scssl

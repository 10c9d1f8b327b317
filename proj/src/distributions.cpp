#include "scssl/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace scssl {

std::string_view to_string(DistributionKind kind) {
  switch (kind) {
    case DistributionKind::consist: return "consist";
    case DistributionKind::uniform: return "uniform";
    case DistributionKind::inverse: return "inverse";
    case DistributionKind::gaussian: return "gaussian";
    case DistributionKind::gaussian_inverse: return "gaussian-inverse";
    case DistributionKind::custom: return "custom";
  }
  return "custom";
}

DistributionKind parse_distribution_kind(std::string_view name) {
  for (auto kind : {DistributionKind::consist, DistributionKind::uniform,
                    DistributionKind::inverse, DistributionKind::gaussian,
                    DistributionKind::gaussian_inverse, DistributionKind::custom}) {
    if (to_string(kind) == name) return kind;
  }
  throw std::invalid_argument("unknown distribution kind: " + std::string(name));
}

ClassDistribution::ClassDistribution(std::vector<double> mass, DistributionKind kind,
                                     bool has_counts)
    : mass_(std::move(mass)), kind_(kind), has_counts_(has_counts) {
  if (mass_.size() < 2) throw std::invalid_argument("ClassDistribution: need at least 2 classes");
  bool any_positive = false;
  for (double m : mass_) {
    if (!std::isfinite(m) || m < 0.0) {
      throw std::invalid_argument("ClassDistribution: entries must be finite and >= 0");
    }
    any_positive = any_positive || m > 0.0;
  }
  if (!any_positive) throw std::invalid_argument("ClassDistribution: all entries are zero");
}

ClassDistribution ClassDistribution::from_counts(std::vector<std::int64_t> counts,
                                                 DistributionKind kind) {
  std::vector<double> mass(counts.begin(), counts.end());
  return ClassDistribution(std::move(mass), kind, true);
}

ClassDistribution ClassDistribution::from_proportions(std::vector<double> weights,
                                                      DistributionKind kind) {
  ClassDistribution d(std::move(weights), kind, false);
  const double sum = d.total();
  for (double& m : d.mass_) m /= sum;
  return d;
}

double ClassDistribution::total() const noexcept {
  return std::accumulate(mass_.begin(), mass_.end(), 0.0);
}

std::vector<double> ClassDistribution::proportions() const {
  std::vector<double> p(mass_);
  const double sum = total();
  for (double& v : p) v /= sum;
  return p;
}

std::vector<std::int64_t> ClassDistribution::counts() const {
  if (!has_counts_) throw std::logic_error("ClassDistribution holds proportions, not counts");
  std::vector<std::int64_t> c(mass_.size());
  std::transform(mass_.begin(), mass_.end(), c.begin(),
                 [](double m) { return static_cast<std::int64_t>(m); });
  return c;
}

ClassDistribution make_longtail(std::size_t num_classes, std::int64_t n_max, double gamma) {
  if (num_classes < 2) throw std::invalid_argument("make_longtail: K must be >= 2");
  if (n_max < 1) throw std::invalid_argument("make_longtail: n_max must be >= 1");
  if (!(gamma >= 1.0) || !std::isfinite(gamma)) {
    throw std::invalid_argument("make_longtail: gamma must be >= 1");
  }
  std::vector<std::int64_t> counts(num_classes);
  const double last = static_cast<double>(num_classes - 1);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double v = static_cast<double>(n_max) * std::pow(gamma, -static_cast<double>(k) / last);
    counts[k] = std::max<std::int64_t>(1, std::llround(v));
  }
  return ClassDistribution::from_counts(std::move(counts), DistributionKind::consist);
}

ClassDistribution make_uniform(std::size_t num_classes, std::int64_t per_class) {
  if (per_class < 1) throw std::invalid_argument("make_uniform: per_class must be >= 1");
  return ClassDistribution::from_counts(std::vector<std::int64_t>(num_classes, per_class),
                                        DistributionKind::uniform);
}

ClassDistribution make_gaussian_anchor(std::size_t num_classes, bool inverted,
                                       GaussianWidth width) {
  if (num_classes < 2) throw std::invalid_argument("make_gaussian_anchor: K must be >= 2");
  const double k_count = static_cast<double>(num_classes);
  const double mean = (k_count - 1.0) / 2.0;
  const double var = width == GaussianWidth::std_dev ? (k_count / 6.0) * (k_count / 6.0)
                                                     : k_count / 6.0;
  std::vector<double> w(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double d = static_cast<double>(k) - mean;
    w[k] = std::exp(-d * d / (2.0 * var));
  }
  if (inverted) {
    // Rank inversion: the class with the i-th largest mass receives the i-th
    // smallest. Plain reversal would be a no-op on this symmetric shape.
    std::vector<std::size_t> order(num_classes);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
    std::vector<double> sorted(num_classes);
    for (std::size_t i = 0; i < num_classes; ++i) sorted[i] = w[order[i]];
    for (std::size_t i = 0; i < num_classes; ++i) w[order[i]] = sorted[num_classes - 1 - i];
  }
  return ClassDistribution::from_proportions(
      std::move(w), inverted ? DistributionKind::gaussian_inverse : DistributionKind::gaussian);
}

ClassDistribution counts_from_proportions(const ClassDistribution& shape, std::int64_t total) {
  if (total < static_cast<std::int64_t>(shape.num_classes())) {
    throw std::invalid_argument("counts_from_proportions: total smaller than class count");
  }
  const auto p = shape.proportions();
  std::vector<std::int64_t> counts(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    counts[k] = std::max<std::int64_t>(1, std::llround(p[k] * static_cast<double>(total)));
  }
  return ClassDistribution::from_counts(std::move(counts), shape.kind());
}

ClassDistribution invert(const ClassDistribution& dist) {
  DistributionKind kind = dist.kind();
  switch (kind) {
    case DistributionKind::consist: kind = DistributionKind::inverse; break;
    case DistributionKind::inverse: kind = DistributionKind::consist; break;
    case DistributionKind::gaussian: kind = DistributionKind::gaussian_inverse; break;
    case DistributionKind::gaussian_inverse: kind = DistributionKind::gaussian; break;
    default: break;
  }
  std::vector<double> mass(dist.mass().rbegin(), dist.mass().rend());
  if (dist.has_counts()) {
    std::vector<std::int64_t> counts(mass.begin(), mass.end());
    return ClassDistribution::from_counts(std::move(counts), kind);
  }
  return ClassDistribution::from_proportions(std::move(mass), kind);
}

double imbalance_ratio(std::span<const double> mass) {
  if (mass.empty()) throw std::invalid_argument("imbalance_ratio: empty distribution");
  const auto [lo, hi] = std::minmax_element(mass.begin(), mass.end());
  if (!(*lo > 0.0)) throw std::invalid_argument("imbalance_ratio: zero-count class");
  return *hi / *lo;
}

double imbalance_ratio(const ClassDistribution& dist) { return imbalance_ratio(dist.mass()); }

std::vector<bool> head_mask(std::size_t num_classes) {
  std::vector<bool> mask(num_classes, false);
  const std::size_t heads = (num_classes + 1) / 2;
  std::fill_n(mask.begin(), heads, true);
  return mask;
}

std::vector<double> rescale_anchor(std::span<const double> anchor,
                                   std::span<const double> estimated) {
  if (anchor.size() != estimated.size()) {
    throw std::invalid_argument("rescale_anchor: length mismatch");
  }
  const double n_total = std::accumulate(estimated.begin(), estimated.end(), 0.0);
  if (estimated.empty() || !(n_total > 0.0)) {
    throw std::invalid_argument("rescale_anchor: estimated counts are empty or all zero");
  }
  const double p_total = std::accumulate(anchor.begin(), anchor.end(), 0.0);
  if (!(p_total > 0.0)) throw std::invalid_argument("rescale_anchor: anchor has no mass");
  std::vector<double> q(anchor.size());
  for (std::size_t k = 0; k < anchor.size(); ++k) q[k] = anchor[k] * n_total / p_total;
  return q;
}

double kl_divergence(std::span<const double> estimated, std::span<const double> rescaled) {
  if (estimated.size() != rescaled.size()) {
    throw std::invalid_argument("kl_divergence: length mismatch");
  }
  if (estimated.empty()) throw std::invalid_argument("kl_divergence: empty input");
  auto smoothed = [](std::span<const double> v) {
    std::vector<double> p(v.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!(v[k] >= 0.0)) throw std::invalid_argument("kl_divergence: negative mass");
      p[k] = v[k] + kKlSmoothing;
      sum += p[k];
    }
    for (double& x : p) x /= sum;
    return p;
  };
  const double est_total = std::accumulate(estimated.begin(), estimated.end(), 0.0);
  const double q_total = std::accumulate(rescaled.begin(), rescaled.end(), 0.0);
  if (!(est_total > 0.0) || !(q_total > 0.0)) {
    throw std::invalid_argument("kl_divergence: totals must be positive");
  }
  // Smoothing is applied to the normalized proportions so that the result
  // does not depend on the absolute sample count.
  std::vector<double> pe(estimated.begin(), estimated.end());
  std::vector<double> pq(rescaled.begin(), rescaled.end());
  for (double& x : pe) x /= est_total;
  for (double& x : pq) x /= q_total;
  const auto p = smoothed(pe);
  const auto q = smoothed(pq);
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) kl += p[k] * std::log(p[k] / q[k]);
  return std::max(0.0, kl);
}

AnchorSet::AnchorSet(std::vector<Anchor> anchors) : anchors_(std::move(anchors)) {
  if (anchors_.empty()) throw std::invalid_argument("AnchorSet: at least one anchor required");
  const std::size_t k = anchors_.front().distribution.num_classes();
  for (const auto& a : anchors_) {
    if (a.distribution.num_classes() != k) {
      throw std::invalid_argument("AnchorSet: anchors differ in class count");
    }
    if (a.expansion_factor <= 3) {
      throw std::invalid_argument("AnchorSet: expansion factor must exceed 3");
    }
  }
}

AnchorSet AnchorSet::standard(std::size_t num_classes, double gamma, GaussianWidth width) {
  if (!(gamma >= 1.0)) throw std::invalid_argument("AnchorSet::standard: gamma must be >= 1");
  std::vector<double> tail(num_classes);
  const double last = static_cast<double>(num_classes - 1);
  for (std::size_t k = 0; k < num_classes; ++k) {
    tail[k] = std::pow(gamma, -static_cast<double>(k) / last);
  }
  auto consist = ClassDistribution::from_proportions(tail, DistributionKind::consist);
  auto uniform = ClassDistribution::from_proportions(std::vector<double>(num_classes, 1.0),
                                                     DistributionKind::uniform);
  std::vector<Anchor> anchors;
  anchors.push_back({"consist", consist, 4});
  anchors.push_back({"uniform", uniform, 5});
  anchors.push_back({"inverse", invert(consist), 6});
  anchors.push_back({"gaussian", make_gaussian_anchor(num_classes, false, width), 4});
  anchors.push_back({"gaussian-inverse", make_gaussian_anchor(num_classes, true, width), 6});
  return AnchorSet(std::move(anchors));
}

AnchorMatch match_anchor(std::span<const double> estimated, const AnchorSet& anchors) {
  if (anchors.size() == 0) throw std::invalid_argument("match_anchor: empty anchor set");
  AnchorMatch out;
  out.divergences.reserve(anchors.size());
  double best = 0.0;
  for (std::size_t o = 0; o < anchors.size(); ++o) {
    const auto q = rescale_anchor(anchors[o].distribution.mass(), estimated);
    const double kl = kl_divergence(estimated, q);
    out.divergences.push_back(kl);
    if (o == 0 || kl < best) {
      best = kl;
      out.index = o;
      out.rescaled = q;
    }
  }
  out.expansion_factor = anchors[out.index].expansion_factor;
  out.gamma_u = imbalance_ratio(out.rescaled);
  return out;
}

}  // namespace scssl

#include "scssl/control.hpp"

#include <algorithm>
#include <stdexcept>

#include "scssl/random.hpp"

namespace scssl {

void ThresholdConstants::validate() const {
  if (!(alpha >= 0.0)) throw std::invalid_argument("thresholds: alpha must be >= 0");
  if (!(rho_max > 0.0 && rho_max <= 1.0)) {
    throw std::invalid_argument("thresholds: rho_max must lie in (0, 1]");
  }
  if (!(rho_floor > 0.0 && rho_floor <= rho_max)) {
    throw std::invalid_argument("thresholds: rho_floor must lie in (0, rho_max]");
  }
}

ThresholdState ThresholdState::flat(std::size_t num_classes, const ThresholdConstants& constants) {
  constants.validate();
  return {std::vector<double>(num_classes, constants.rho_max),
          std::vector<double>(num_classes, constants.rho_max), constants};
}

ThresholdState init_thresholds(double expansion_factor, double gamma_u,
                               const std::vector<bool>& head, const ThresholdConstants& constants) {
  if (!(expansion_factor > 3.0)) {
    throw std::invalid_argument("init_thresholds: expansion factor must exceed 3");
  }
  if (!(gamma_u >= 1.0)) throw std::invalid_argument("init_thresholds: gamma_u must be >= 1");
  ThresholdState state = ThresholdState::flat(head.size(), constants);
  const double c = expansion_factor;
  const double rb = constants.rho_max - (c - 4.0) / 10.0 * std::min(gamma_u / 50.0, 1.0);
  const double re = constants.rho_max - (c - 3.0) / 5.0 * std::min(gamma_u / 20.0, 1.0);
  for (std::size_t k = 0; k < head.size(); ++k) {
    if (head[k]) continue;
    state.rho_b[k] = std::clamp(rb, constants.rho_floor, constants.rho_max);
    state.rho_e[k] = std::clamp(re, constants.rho_floor, constants.rho_max);
  }
  return state;
}

ThresholdState update_thresholds(const ThresholdState& state, const BiasVector& bias) {
  if (static_cast<std::size_t>(bias.b_opt.size()) != state.rho_b.size() ||
      state.rho_e.size() != state.rho_b.size()) {
    throw std::invalid_argument("update_thresholds: length mismatch");
  }
  ThresholdState next = state;
  const auto& c = state.constants;
  for (std::size_t k = 0; k < next.rho_b.size(); ++k) {
    if (!(bias.b_opt[static_cast<Eigen::Index>(k)] > c.nu)) continue;
    next.rho_b[k] = std::max(c.rho_floor, next.rho_b[k] - c.alpha);
    next.rho_e[k] = std::max(c.rho_floor, next.rho_e[k] - c.alpha);
  }
  return next;
}

BiasVector extract_bias_vector(const Model& model) { return {model.head(HeadId::output).bias}; }

Eigen::MatrixXd calibrate_logits(const Model& model, const Eigen::MatrixXd& x) {
  return model.head(HeadId::output).weight * forward_features(model, x);
}

Eigen::VectorXd calibrate_logits(const Model& model, const Eigen::VectorXd& x) {
  return calibrate_logits(model, Eigen::MatrixXd(x)).col(0);
}

std::string_view to_string(Predictor p) {
  switch (p) {
    case Predictor::original: return "original";
    case Predictor::output: return "output";
    case Predictor::calibrated: return "calibrated";
    case Predictor::expansive: return "expansive";
  }
  return "original";
}

Eigen::MatrixXd predictor_logits(const Model& model, Predictor p, const Eigen::MatrixXd& x) {
  switch (p) {
    case Predictor::original:
      return head_logits(model.head(HeadId::original), forward_features(model, x));
    case Predictor::output:
      return head_logits(model.head(HeadId::output), forward_features(model, x));
    case Predictor::expansive:
      return head_logits(model.head(HeadId::expansive), forward_features(model, x));
    case Predictor::calibrated:
      return calibrate_logits(model, x);
  }
  throw std::invalid_argument("predictor_logits: unknown predictor");
}

std::vector<int> predict_batch(const Model& model, Predictor p, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd logits = predictor_logits(model, p, x);
  std::vector<int> out(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    out[static_cast<std::size_t>(j)] = argmax(logits.col(j));
  }
  return out;
}

std::vector<std::int64_t> estimate_unlabeled_distribution(const Model& model,
                                                          const Eigen::MatrixXd& unlabeled) {
  if (unlabeled.cols() == 0) {
    throw std::invalid_argument("estimate_unlabeled_distribution: empty unlabeled set");
  }
  std::vector<std::int64_t> counts(static_cast<std::size_t>(model.shape.num_classes), 0);
  for (int y : predict_batch(model, Predictor::calibrated, unlabeled)) {
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

double separation_violation_rate(const Model& model, Predictor p, const Eigen::MatrixXd& samples,
                                 int n_aug, const AugmentConfig& augment, std::uint64_t seed) {
  if (samples.cols() == 0) throw std::invalid_argument("separation_violation_rate: no samples");
  if (n_aug < 1) throw std::invalid_argument("separation_violation_rate: n_aug must be >= 1");
  const auto clean = predict_batch(model, p, samples);
  std::vector<std::uint8_t> violated(clean.size(), 0);
  for (int a = 0; a < n_aug; ++a) {
    const auto views =
        strong_augment_batch(samples, augment, derive_seed(seed, {static_cast<std::uint64_t>(a)}));
    const auto pred = predict_batch(model, p, views);
    for (std::size_t j = 0; j < pred.size(); ++j) violated[j] |= pred[j] != clean[j] ? 1 : 0;
  }
  const auto count = std::count(violated.begin(), violated.end(), std::uint8_t{1});
  return static_cast<double>(count) / static_cast<double>(violated.size());
}

}  // namespace scssl

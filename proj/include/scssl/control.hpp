#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "scssl/network.hpp"
#include "scssl/synth_data.hpp"

namespace scssl {

struct ThresholdConstants {
  double alpha = 0.005;
  double nu = 1.0;
  double rho_max = 0.95;
  double rho_floor = 0.1;

  void validate() const;
};

/// Per-class confidence thresholds of the output (rho_b) and expansive
/// (rho_e) heads.
struct ThresholdState {
  std::vector<double> rho_b;
  std::vector<double> rho_e;
  ThresholdConstants constants;

  /// Both vectors at rho_max.
  static ThresholdState flat(std::size_t num_classes, const ThresholdConstants& constants);
};

/// Head classes keep rho_max. Non-head classes start at
///   rho_b = rho_max - (c - 4) / 10 * min(gamma_u / 50, 1)
///   rho_e = rho_max - (c - 3) / 5  * min(gamma_u / 20, 1)
/// clamped to [rho_floor, rho_max].
ThresholdState init_thresholds(double expansion_factor, double gamma_u,
                               const std::vector<bool>& head, const ThresholdConstants& constants);

/// The output head's bias term.
struct BiasVector {
  Eigen::VectorXd b_opt;
};

/// rho(k) -= alpha for every class with b_opt(k) > nu (signed comparison),
/// applied to both vectors and clamped at rho_floor.
ThresholdState update_thresholds(const ThresholdState& state, const BiasVector& bias);

BiasVector extract_bias_vector(const Model& model);

/// W_b B(x): the output head with its bias removed.
Eigen::MatrixXd calibrate_logits(const Model& model, const Eigen::MatrixXd& x);
Eigen::VectorXd calibrate_logits(const Model& model, const Eigen::VectorXd& x);

/// Which classifier produces a prediction.
enum class Predictor { original, output, calibrated, expansive };
inline constexpr std::array<Predictor, 4> kAllPredictors = {
    Predictor::original, Predictor::output, Predictor::calibrated, Predictor::expansive};
std::string_view to_string(Predictor p);

Eigen::MatrixXd predictor_logits(const Model& model, Predictor p, const Eigen::MatrixXd& x);
std::vector<int> predict_batch(const Model& model, Predictor p, const Eigen::MatrixXd& x);

/// N^e_k = number of unlabeled samples whose calibrated prediction is k.
std::vector<std::int64_t> estimate_unlabeled_distribution(const Model& model,
                                                          const Eigen::MatrixXd& unlabeled);

/// Fraction of samples for which at least one of n_aug strong views changes
/// the predicted class relative to the clean prediction. View a is
/// strong_augment_batch(samples, augment, derive_seed(seed, {a})).
double separation_violation_rate(const Model& model, Predictor p, const Eigen::MatrixXd& samples,
                                 int n_aug, const AugmentConfig& augment, std::uint64_t seed);

}  // namespace scssl

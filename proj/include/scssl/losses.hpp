#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "scssl/network.hpp"
#include "scssl/synth_data.hpp"

namespace scssl {

/// Per-class logit shift delta_p[k] = log(N_k / sum N) from labeled counts.
struct LogitAdjustment {
  Eigen::VectorXd delta_p;

  static LogitAdjustment from_counts(std::span<const std::int64_t> counts);
  static LogitAdjustment zeros(int num_classes);
};

struct LossReport {
  double value = 0.0;
  /// dLoss/dlogits, K x batch. Already divided by the batch size.
  Eigen::MatrixXd logit_gradients;

  // Consistency losses only.
  std::vector<int> pseudo_labels;
  std::vector<std::uint8_t> mask;  // 1 = sample contributes
  std::vector<std::int64_t> pseudo_label_counts;
  std::vector<std::int64_t> included_counts;
  /// 1 - included / pseudo-labeled for each class; 0 where a class received
  /// no pseudo-labels.
  std::vector<double> per_class_mask_rate;
};

/// Mean cross-entropy of (logits + tau * delta_p) against labels.
LossReport supervised_balanced_loss(const Eigen::MatrixXd& logits, std::span<const int> labels,
                                    double tau, const LogitAdjustment& adj);

/// Masked consistency loss.
///
/// Pseudo-labels and confidences come from `label_logits` (the weak view,
/// treated as constant); the cross-entropy is taken on `strong_logits`. A
/// sample contributes iff max softmax >= thresholds[pseudo_label]. The sum is
/// divided by the full batch size. `class_weights`, when non-empty, scales
/// each sample by the weight of its pseudo-class.
LossReport consistency_loss(const Eigen::MatrixXd& label_logits,
                            const Eigen::MatrixXd& strong_logits,
                            std::span<const double> thresholds,
                            std::span<const double> class_weights = {});

/// Which head supplies the pseudo-labels for the output head's consistency
/// term. The original and expansive heads always label themselves.
enum class PseudoLabelSource { self, expansive };

struct LossConfig {
  double tau_b = 2.0;
  double tau_e = 4.0;
  double lambda_u = 2.0;
  double lambda_basic = 1.0;
  double rho_max = 0.95;
  /// Per-term multipliers; all three at zero give a zero objective.
  double weight_basic = 1.0;
  double weight_output = 1.0;
  double weight_expansive = 1.0;
  std::vector<double> rho_b;
  std::vector<double> rho_e;
  LogitAdjustment adjustment;
  AugmentConfig augment;
  /// Optional per-class consistency weights for the output and expansive heads.
  std::vector<double> unlabeled_class_weights;
  PseudoLabelSource output_label_source = PseudoLabelSource::self;
};

/// Components of one evaluation of the training objective plus everything
/// needed to backpropagate it.
struct TotalLoss {
  double basic = 0.0;  // sup_original + lambda_basic * con_original
  double sup_original = 0.0;
  double con_original = 0.0;
  double sup_b = 0.0;
  double con_b = 0.0;
  double sup_e = 0.0;
  double con_e = 0.0;
  double total = 0.0;

  std::array<LossReport, 3> supervised;   // per head
  std::array<LossReport, 3> consistency;  // per head
  ForwardPass labeled_pass;
  ForwardPass strong_pass;
  /// Weighted logit gradients fed to backward().
  std::array<Eigen::MatrixXd, 3> labeled_grads;
  std::array<Eigen::MatrixXd, 3> strong_grads;

  /// The documented weighting of the components.
  static double combine(double basic, double sup_b, double con_b, double sup_e, double con_e,
                        const LossConfig& cfg);
};

/// Full objective on one labeled and one unlabeled minibatch:
///   w_basic * L_basic
///   + w_output * (L_sup(tau_b, F_b) + lambda_u * L_con(rho_b, F_b))
///   + w_expansive * (L_sup(tau_e, F_e) + lambda_u * L_con(rho_e, F_e))
/// L_basic is FixMatch on the original head: plain CE plus lambda_basic times
/// consistency at a flat rho_max threshold. Weak and strong views are drawn
/// from `seed`.
TotalLoss total_loss(const Model& model, const Eigen::MatrixXd& labeled_x,
                     std::span<const int> labeled_y, const Eigen::MatrixXd& unlabeled_x,
                     const LossConfig& cfg, std::uint64_t seed);

/// Adds the parameter gradients of `loss` into `grads`.
void accumulate_gradients(const Model& model, const TotalLoss& loss, Gradients& grads);

/// Model-level conveniences for single terms.
LossReport supervised_balanced_loss(const Model& model, HeadId head, const LabeledSet& batch,
                                    double tau, const LogitAdjustment& adj);
LossReport consistency_loss(const Model& model, HeadId head, const Eigen::MatrixXd& unlabeled_x,
                            std::span<const double> thresholds, const AugmentConfig& augment,
                            std::uint64_t seed);
/// L_basic alone, with the same view seeds as total_loss.
double base_loss(const Model& model, const Eigen::MatrixXd& labeled_x,
                 std::span<const int> labeled_y, const Eigen::MatrixXd& unlabeled_x,
                 const LossConfig& cfg, std::uint64_t seed);

/// Seeds for the two unlabeled views inside total_loss.
std::uint64_t weak_view_seed(std::uint64_t seed);
std::uint64_t strong_view_seed(std::uint64_t seed);

}  // namespace scssl

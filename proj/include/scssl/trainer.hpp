#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scssl/control.hpp"
#include "scssl/distributions.hpp"
#include "scssl/losses.hpp"
#include "scssl/network.hpp"
#include "scssl/synth_data.hpp"

namespace scssl {

struct TrainConfig {
  int epochs = 60;
  int steps_per_epoch = 20;
  int labeled_batch = 64;
  int unlabeled_batch = 128;
  /// Negative selects the default, max(1, epochs / 10).
  int estimation_epochs = -1;

  OptimizerConfig optimizer;
  double tau_b = 2.0;
  double tau_e = 4.0;
  double lambda_u = 2.0;
  double lambda_basic = 1.0;
  double weak_strength = 0.25;
  double strong_strength = 1.0;
  double strong_dropout = 0.2;
  ThresholdConstants thresholds;
  /// When false the thresholds stay at rho_max for the whole run: no
  /// initialization from the matched anchor and no bias-driven updates.
  bool sampling_control = true;
  bool reweight_unlabeled = false;
  PseudoLabelSource output_label_source = PseudoLabelSource::self;

  std::vector<int> hidden = {64, 64};
  int feature_dim = 32;
  Activation activation = Activation::relu;

  double anchor_gamma = 100.0;
  GaussianWidth anchor_width = GaussianWidth::std_dev;
  /// Overrides the standard anchor set when non-empty.
  std::vector<Anchor> custom_anchors;

  int probe_size = 256;
  int probe_augs = 4;
  std::uint64_t seed = 0;

  void validate() const;
  int resolved_estimation_epochs() const;
  AnchorSet anchor_set(std::size_t num_classes) const;
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double basic = 0.0;
  double sup_b = 0.0;
  double con_b = 0.0;
  double sup_e = 0.0;
  double con_e = 0.0;
  double total = 0.0;
  /// Expansive head: masked fraction among samples pseudo-labeled as head /
  /// non-head classes (0 when there are none).
  double mask_rate_head = 0.0;
  double mask_rate_nonhead = 0.0;
};

struct EvaluationResult {
  std::vector<double> per_class_recall;
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]

  double mean_recall(const std::vector<bool>& mask, bool want) const;
};

struct EpochRecord {
  int epoch = 0;
  bool estimation = false;
  /// Mean of the step losses in this epoch.
  StepRecord mean_loss;
  std::array<EvaluationResult, 4> eval;  // indexed by Predictor
  /// Unmasked pseudo-labels per class over the epoch, per head.
  std::array<std::vector<std::int64_t>, 3> pseudo_histogram;
  std::array<std::int64_t, 3> pseudo_total{};
  std::array<std::int64_t, 3> unmasked_total{};
  double mu_hat = 0.0;
  std::optional<double> bound;
  std::vector<double> rho_b;
  std::vector<double> rho_e;
  std::array<std::vector<double>, 3> head_bias;

  const EvaluationResult& evaluation(Predictor p) const {
    return eval[static_cast<std::size_t>(p)];
  }
};

struct MetricsLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

struct EstimationResult {
  Model model;
  std::vector<std::int64_t> estimated_counts;
  AnchorMatch match;
};

/// Spearman correlations of each head's bias with the labeled counts.
/// nullopt when either vector is constant.
struct BiasCorrelations {
  std::optional<double> original;
  std::optional<double> output;
  std::optional<double> expansive;
};

struct TrainResult {
  Model model;
  MetricsLog log;
  std::vector<std::int64_t> estimated_counts;
  AnchorMatch match;
  std::string matched_anchor;
  ThresholdState initial_thresholds;
  ThresholdState final_thresholds;
  BiasCorrelations correlations;
  /// Accesses to unlabeled ground truth made while training; must be 0.
  std::size_t label_audit_delta = 0;
};

/// Raised when the objective becomes non-finite. Carries the last model.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, Model snapshot, int step)
      : std::runtime_error(what), snapshot_(std::move(snapshot)), step_(step) {}
  const Model& snapshot() const noexcept { return snapshot_; }
  int step() const noexcept { return step_; }

 private:
  Model snapshot_;
  int step_;
};

/// Trains for the estimation epochs with all thresholds at rho_max, counts
/// calibrated predictions on the unlabeled split and matches anchors.
EstimationResult run_estimation_phase(const TrainConfig& config, const Dataset& data);

/// Estimation phase, anchor matching, threshold initialization, then joint
/// training of all heads until `epochs` in total have run.
TrainResult train(const TrainConfig& config, const Dataset& data);

EvaluationResult evaluate(const Model& model, const LabeledSet& test, Predictor predictor);

/// Spearman rank correlation with average ranks for ties. nullopt for a
/// constant input.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

BiasCorrelations bias_pattern_report(const Model& model,
                                     std::span<const std::int64_t> labeled_counts);

}  // namespace scssl

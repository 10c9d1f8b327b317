#include "scssl/losses.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "scssl/random.hpp"

namespace scssl {

namespace {

// log-sum-exp of one column.
double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

}  // namespace

LogitAdjustment LogitAdjustment::from_counts(std::span<const std::int64_t> counts) {
  if (counts.size() < 2) throw std::invalid_argument("LogitAdjustment: need at least 2 classes");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(),
                                                           std::int64_t{0}));
  LogitAdjustment adj;
  adj.delta_p.resize(static_cast<Eigen::Index>(counts.size()));
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] <= 0) throw std::invalid_argument("LogitAdjustment: counts must be positive");
    adj.delta_p[static_cast<Eigen::Index>(k)] = std::log(static_cast<double>(counts[k]) / total);
  }
  return adj;
}

LogitAdjustment LogitAdjustment::zeros(int num_classes) {
  return {Eigen::VectorXd::Zero(num_classes)};
}

LossReport supervised_balanced_loss(const Eigen::MatrixXd& logits, std::span<const int> labels,
                                    double tau, const LogitAdjustment& adj) {
  const Eigen::Index n = logits.cols();
  if (n == 0) throw std::invalid_argument("supervised_balanced_loss: empty batch");
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw std::invalid_argument("supervised_balanced_loss: label count mismatch");
  }
  if (!(tau >= 0.0)) throw std::invalid_argument("supervised_balanced_loss: tau must be >= 0");
  if (adj.delta_p.size() != logits.rows()) {
    throw std::invalid_argument("supervised_balanced_loss: adjustment length mismatch");
  }
  Eigen::MatrixXd adjusted = logits;
  if (tau != 0.0) adjusted.colwise() += tau * adj.delta_p;

  LossReport r;
  r.logit_gradients = softmax(adjusted);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= logits.rows()) {
      throw std::invalid_argument("supervised_balanced_loss: label out of range");
    }
    sum += log_sum_exp(adjusted.col(j)) - adjusted(y, j);
    r.logit_gradients(y, j) -= 1.0;
  }
  r.value = sum / static_cast<double>(n);
  r.logit_gradients /= static_cast<double>(n);
  return r;
}

LossReport consistency_loss(const Eigen::MatrixXd& label_logits,
                            const Eigen::MatrixXd& strong_logits,
                            std::span<const double> thresholds,
                            std::span<const double> class_weights) {
  const Eigen::Index k_count = label_logits.rows();
  const Eigen::Index n = label_logits.cols();
  if (n == 0) throw std::invalid_argument("consistency_loss: empty batch");
  if (strong_logits.rows() != k_count || strong_logits.cols() != n) {
    throw std::invalid_argument("consistency_loss: view shapes differ");
  }
  if (thresholds.size() != static_cast<std::size_t>(k_count)) {
    throw std::invalid_argument("consistency_loss: thresholds length differs from K");
  }
  for (double t : thresholds) {
    if (!(t > 0.0 && t <= 1.0)) {
      throw std::invalid_argument("consistency_loss: thresholds must lie in (0, 1]");
    }
  }
  if (!class_weights.empty() && class_weights.size() != static_cast<std::size_t>(k_count)) {
    throw std::invalid_argument("consistency_loss: class weight length differs from K");
  }

  const Eigen::MatrixXd label_probs = softmax(label_logits);
  const Eigen::MatrixXd strong_probs = softmax(strong_logits);

  LossReport r;
  r.logit_gradients = Eigen::MatrixXd::Zero(k_count, n);
  r.pseudo_labels.resize(static_cast<std::size_t>(n));
  r.mask.resize(static_cast<std::size_t>(n));
  r.pseudo_label_counts.assign(static_cast<std::size_t>(k_count), 0);
  r.included_counts.assign(static_cast<std::size_t>(k_count), 0);
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = argmax(label_probs.col(j));
    const double confidence = label_probs(y, j);
    const auto ks = static_cast<std::size_t>(y);
    const auto js = static_cast<std::size_t>(j);
    r.pseudo_labels[js] = y;
    ++r.pseudo_label_counts[ks];
    const bool keep = confidence >= thresholds[ks];
    r.mask[js] = keep ? 1 : 0;
    if (!keep) continue;
    ++r.included_counts[ks];
    const double w = class_weights.empty() ? 1.0 : class_weights[ks];
    sum += w * (log_sum_exp(strong_logits.col(j)) - strong_logits(y, j));
    r.logit_gradients.col(j) = (w * inv_n) * strong_probs.col(j);
    r.logit_gradients(y, j) -= w * inv_n;
  }
  r.value = sum * inv_n;
  r.per_class_mask_rate.resize(static_cast<std::size_t>(k_count));
  for (std::size_t k = 0; k < r.per_class_mask_rate.size(); ++k) {
    const auto total = r.pseudo_label_counts[k];
    r.per_class_mask_rate[k] =
        total == 0 ? 0.0
                   : 1.0 - static_cast<double>(r.included_counts[k]) / static_cast<double>(total);
  }
  return r;
}

double TotalLoss::combine(double basic, double sup_b, double con_b, double sup_e, double con_e,
                          const LossConfig& cfg) {
  return cfg.weight_basic * basic + cfg.weight_output * (sup_b + cfg.lambda_u * con_b) +
         cfg.weight_expansive * (sup_e + cfg.lambda_u * con_e);
}

std::uint64_t weak_view_seed(std::uint64_t seed) { return derive_seed(seed, {0x5745414BULL}); }
std::uint64_t strong_view_seed(std::uint64_t seed) { return derive_seed(seed, {0x5354524FULL}); }

TotalLoss total_loss(const Model& model, const Eigen::MatrixXd& labeled_x,
                     std::span<const int> labeled_y, const Eigen::MatrixXd& unlabeled_x,
                     const LossConfig& cfg, std::uint64_t seed) {
  const auto k_count = static_cast<std::size_t>(model.shape.num_classes);
  if (cfg.rho_b.size() != k_count || cfg.rho_e.size() != k_count) {
    throw std::invalid_argument("total_loss: threshold vectors must have length K");
  }
  if (unlabeled_x.cols() == 0) throw std::invalid_argument("total_loss: empty unlabeled batch");

  TotalLoss out;
  out.labeled_pass = forward(model, labeled_x);
  const ForwardPass weak_pass = forward(model, weak_augment_batch(unlabeled_x, cfg.augment,
                                                                  weak_view_seed(seed)));
  out.strong_pass = forward(model, strong_augment_batch(unlabeled_x, cfg.augment,
                                                        strong_view_seed(seed)));

  const LogitAdjustment none = LogitAdjustment::zeros(model.shape.num_classes);
  const std::vector<double> flat(k_count, cfg.rho_max);
  const std::span<const double> weights = cfg.unlabeled_class_weights;

  auto& sup = out.supervised;
  auto& con = out.consistency;
  constexpr auto kO = static_cast<std::size_t>(HeadId::original);
  constexpr auto kB = static_cast<std::size_t>(HeadId::output);
  constexpr auto kE = static_cast<std::size_t>(HeadId::expansive);

  sup[kO] = supervised_balanced_loss(out.labeled_pass.logits[kO], labeled_y, 0.0, none);
  sup[kB] = supervised_balanced_loss(out.labeled_pass.logits[kB], labeled_y, cfg.tau_b,
                                     cfg.adjustment);
  sup[kE] = supervised_balanced_loss(out.labeled_pass.logits[kE], labeled_y, cfg.tau_e,
                                     cfg.adjustment);

  con[kO] = consistency_loss(weak_pass.logits[kO], out.strong_pass.logits[kO], flat);
  const auto& output_labels = cfg.output_label_source == PseudoLabelSource::self
                                  ? weak_pass.logits[kB]
                                  : weak_pass.logits[kE];
  con[kB] = consistency_loss(output_labels, out.strong_pass.logits[kB], cfg.rho_b, weights);
  con[kE] = consistency_loss(weak_pass.logits[kE], out.strong_pass.logits[kE], cfg.rho_e, weights);

  out.sup_original = sup[kO].value;
  out.con_original = con[kO].value;
  out.basic = out.sup_original + cfg.lambda_basic * out.con_original;
  out.sup_b = sup[kB].value;
  out.con_b = con[kB].value;
  out.sup_e = sup[kE].value;
  out.con_e = con[kE].value;
  out.total = TotalLoss::combine(out.basic, out.sup_b, out.con_b, out.sup_e, out.con_e, cfg);

  out.labeled_grads[kO] = cfg.weight_basic * sup[kO].logit_gradients;
  out.labeled_grads[kB] = cfg.weight_output * sup[kB].logit_gradients;
  out.labeled_grads[kE] = cfg.weight_expansive * sup[kE].logit_gradients;
  out.strong_grads[kO] = (cfg.weight_basic * cfg.lambda_basic) * con[kO].logit_gradients;
  out.strong_grads[kB] = (cfg.weight_output * cfg.lambda_u) * con[kB].logit_gradients;
  out.strong_grads[kE] = (cfg.weight_expansive * cfg.lambda_u) * con[kE].logit_gradients;
  return out;
}

void accumulate_gradients(const Model& model, const TotalLoss& loss, Gradients& grads) {
  backward(model, loss.labeled_pass,
           {&loss.labeled_grads[0], &loss.labeled_grads[1], &loss.labeled_grads[2]}, grads);
  backward(model, loss.strong_pass,
           {&loss.strong_grads[0], &loss.strong_grads[1], &loss.strong_grads[2]}, grads);
}

LossReport supervised_balanced_loss(const Model& model, HeadId head, const LabeledSet& batch,
                                    double tau, const LogitAdjustment& adj) {
  const Eigen::MatrixXd logits = head_logits(model.head(head), forward_features(model, batch.x));
  return supervised_balanced_loss(logits, batch.y, tau, adj);
}

LossReport consistency_loss(const Model& model, HeadId head, const Eigen::MatrixXd& unlabeled_x,
                            std::span<const double> thresholds, const AugmentConfig& augment,
                            std::uint64_t seed) {
  const auto& h = model.head(head);
  const Eigen::MatrixXd weak = head_logits(
      h, forward_features(model, weak_augment_batch(unlabeled_x, augment, weak_view_seed(seed))));
  const Eigen::MatrixXd strong = head_logits(
      h, forward_features(model, strong_augment_batch(unlabeled_x, augment,
                                                      strong_view_seed(seed))));
  return consistency_loss(weak, strong, thresholds);
}

double base_loss(const Model& model, const Eigen::MatrixXd& labeled_x,
                 std::span<const int> labeled_y, const Eigen::MatrixXd& unlabeled_x,
                 const LossConfig& cfg, std::uint64_t seed) {
  const LabeledSet batch{labeled_x, std::vector<int>(labeled_y.begin(), labeled_y.end())};
  const auto sup = supervised_balanced_loss(model, HeadId::original, batch, 0.0,
                                            LogitAdjustment::zeros(model.shape.num_classes));
  const std::vector<double> flat(static_cast<std::size_t>(model.shape.num_classes), cfg.rho_max);
  const auto con = consistency_loss(model, HeadId::original, unlabeled_x, flat, cfg.augment, seed);
  return sup.value + cfg.lambda_basic * con.value;
}

}  // namespace scssl

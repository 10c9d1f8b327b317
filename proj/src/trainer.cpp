#include "scssl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scssl/random.hpp"
#include "scssl/theory.hpp"

namespace scssl {

namespace {

enum StreamTag : std::uint64_t {
  kInit = 11,
  kLabeledShuffle = 12,
  kUnlabeledDraw = 13,
  kViews = 14,
  kProbe = 15,
  kProbeViews = 16,
};

// Cycles through shuffled permutations of [0, n).
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::vector<std::size_t> take(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[rng_.below(i)]);
    }
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

Eigen::MatrixXd gather(const Eigen::MatrixXd& x, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(idx[j]));
  }
  return out;
}

EvaluationResult evaluate_logits(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                                 int num_classes) {
  const auto k = static_cast<std::size_t>(num_classes);
  EvaluationResult r;
  r.confusion.assign(k, std::vector<std::int64_t>(k, 0));
  std::int64_t correct = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    const int p = argmax(logits.col(j));
    ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    correct += y == p ? 1 : 0;
  }
  r.per_class_recall.assign(k, 0.0);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const auto row = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::int64_t{0});
    if (row == 0) continue;
    r.per_class_recall[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(row);
    sum += r.per_class_recall[c];
    ++present;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(logits.cols());
  r.balanced_accuracy = present == 0 ? 0.0 : sum / static_cast<double>(present);
  return r;
}

std::vector<double> to_vector(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

// One training run. The estimation phase and the controlled phase share the
// optimizer state, samplers and step counter.
class Session {
 public:
  Session(const TrainConfig& cfg, const Dataset& data)
      : cfg_(cfg),
        data_(data),
        k_(static_cast<std::size_t>(data.task().num_classes)),
        head_(head_mask(k_)),
        model_(Model::initialize(shape(cfg, data), derive_seed(cfg.seed, {kInit}))),
        optimizer_(model_.shape, cfg.optimizer),
        labeled_sampler_(data.labeled().size(), derive_seed(cfg.seed, {kLabeledShuffle})),
        thresholds_(ThresholdState::flat(k_, cfg.thresholds)) {
    cfg_.validate();
    if (data.labeled().size() == 0) throw std::invalid_argument("train: labeled split is empty");
    if (data.unlabeled().cols() == 0) throw std::invalid_argument("train: unlabeled split is empty");
    if (data.test().size() == 0) throw std::invalid_argument("train: test split is empty");
    loss_cfg_.tau_b = cfg.tau_b;
    loss_cfg_.tau_e = cfg.tau_e;
    loss_cfg_.lambda_u = cfg.lambda_u;
    loss_cfg_.lambda_basic = cfg.lambda_basic;
    loss_cfg_.rho_max = cfg.thresholds.rho_max;
    loss_cfg_.adjustment = LogitAdjustment::from_counts(data.labeled_histogram());
    loss_cfg_.augment = {data.task().noise, cfg.weak_strength, cfg.strong_strength,
                         cfg.strong_dropout};
    loss_cfg_.output_label_source = cfg.output_label_source;

    Rng probe_rng(derive_seed(cfg.seed, {kProbe}));
    std::vector<std::size_t> probe_idx(static_cast<std::size_t>(cfg.probe_size));
    for (auto& i : probe_idx) i = probe_rng.below(static_cast<std::uint64_t>(data.unlabeled().cols()));
    probe_ = gather(data.unlabeled(), probe_idx);
  }

  static NetworkShape shape(const TrainConfig& cfg, const Dataset& data) {
    NetworkShape s;
    s.input_dim = data.task().dim;
    s.hidden = cfg.hidden;
    s.feature_dim = cfg.feature_dim;
    s.num_classes = data.task().num_classes;
    s.activation = cfg.activation;
    return s;
  }

  void run_epochs(int count, bool estimation) {
    for (int e = 0; e < count; ++e) run_epoch(estimation);
  }

  void match() {
    estimated_ = estimate_unlabeled_distribution(model_, data_.unlabeled());
    const std::vector<double> est(estimated_.begin(), estimated_.end());
    anchors_ = cfg_.anchor_set(k_);
    match_ = match_anchor(est, anchors_);
    if (cfg_.sampling_control) {
      thresholds_ = init_thresholds(match_.expansion_factor, match_.gamma_u, head_, cfg_.thresholds);
    }
    if (cfg_.reweight_unlabeled) {
      // Weights proportional to 1 / Q_k of the matched anchor, mean 1.
      std::vector<double> w(k_);
      for (std::size_t k = 0; k < k_; ++k) w[k] = 1.0 / std::max(match_.rescaled[k], 1e-12);
      const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(k_);
      for (double& v : w) v /= mean;
      loss_cfg_.unlabeled_class_weights = std::move(w);
    }
    matched_ = true;
    initial_thresholds_ = thresholds_;
  }

  Model& model() { return model_; }
  MetricsLog& log() { return log_; }
  const AnchorMatch& anchor_match() const { return match_; }
  const AnchorSet& anchors() const { return anchors_; }
  const std::vector<std::int64_t>& estimated() const { return estimated_; }
  const ThresholdState& thresholds() const { return thresholds_; }
  const ThresholdState& initial_thresholds() const { return initial_thresholds_; }

 private:
  void run_epoch(bool estimation) {
    EpochRecord rec;
    rec.epoch = epoch_;
    rec.estimation = estimation;
    for (auto& h : rec.pseudo_histogram) h.assign(k_, 0);
    StepRecord sum;
    std::int64_t masked_head = 0, total_head = 0, masked_non = 0, total_non = 0;

    for (int s = 0; s < cfg_.steps_per_epoch; ++s) {
      const auto step_seed = static_cast<std::uint64_t>(step_);
      const auto lab_idx = labeled_sampler_.take(static_cast<std::size_t>(cfg_.labeled_batch));
      std::vector<int> lab_y(lab_idx.size());
      for (std::size_t i = 0; i < lab_idx.size(); ++i) lab_y[i] = data_.labeled().y[lab_idx[i]];
      Rng draw(derive_seed(cfg_.seed, {kUnlabeledDraw, step_seed}));
      std::vector<std::size_t> unl_idx(static_cast<std::size_t>(cfg_.unlabeled_batch));
      for (auto& i : unl_idx) i = draw.below(static_cast<std::uint64_t>(data_.unlabeled().cols()));

      loss_cfg_.rho_b = thresholds_.rho_b;
      loss_cfg_.rho_e = thresholds_.rho_e;
      const TotalLoss loss =
          total_loss(model_, gather(data_.labeled().x, lab_idx), lab_y,
                     gather(data_.unlabeled(), unl_idx), loss_cfg_,
                     derive_seed(cfg_.seed, {kViews, step_seed}));
      if (!std::isfinite(loss.total)) {
        throw TrainingAborted("non-finite loss at step " + std::to_string(step_), model_, step_);
      }

      Gradients grads = Model::zeros(model_.shape);
      accumulate_gradients(model_, loss, grads);
      optimizer_.step(model_, grads);
      if (!model_.all_finite()) {
        throw TrainingAborted("non-finite parameters at step " + std::to_string(step_), model_,
                              step_);
      }
      if (!estimation && cfg_.sampling_control) {
        thresholds_ = update_thresholds(thresholds_, extract_bias_vector(model_));
      }

      StepRecord r;
      r.step = step_;
      r.epoch = epoch_;
      r.basic = loss.basic;
      r.sup_b = loss.sup_b;
      r.con_b = loss.con_b;
      r.sup_e = loss.sup_e;
      r.con_e = loss.con_e;
      r.total = loss.total;
      const auto& exp_con = loss.consistency[static_cast<std::size_t>(HeadId::expansive)];
      std::int64_t mh = 0, th = 0, mn = 0, tn = 0;
      for (std::size_t k = 0; k < k_; ++k) {
        const auto masked = exp_con.pseudo_label_counts[k] - exp_con.included_counts[k];
        if (head_[k]) {
          mh += masked;
          th += exp_con.pseudo_label_counts[k];
        } else {
          mn += masked;
          tn += exp_con.pseudo_label_counts[k];
        }
      }
      r.mask_rate_head = th == 0 ? 0.0 : static_cast<double>(mh) / static_cast<double>(th);
      r.mask_rate_nonhead = tn == 0 ? 0.0 : static_cast<double>(mn) / static_cast<double>(tn);
      masked_head += mh;
      total_head += th;
      masked_non += mn;
      total_non += tn;
      log_.steps.push_back(r);

      sum.basic += r.basic;
      sum.sup_b += r.sup_b;
      sum.con_b += r.con_b;
      sum.sup_e += r.sup_e;
      sum.con_e += r.con_e;
      sum.total += r.total;
      for (HeadId h : kAllHeads) {
        const auto hi = static_cast<std::size_t>(h);
        const auto& con = loss.consistency[hi];
        for (std::size_t k = 0; k < k_; ++k) rec.pseudo_histogram[hi][k] += con.included_counts[k];
        rec.pseudo_total[hi] += static_cast<std::int64_t>(con.pseudo_labels.size());
        rec.unmasked_total[hi] +=
            std::accumulate(con.included_counts.begin(), con.included_counts.end(), std::int64_t{0});
      }
      ++step_;
    }

    const double n = static_cast<double>(cfg_.steps_per_epoch);
    rec.mean_loss.step = step_ - 1;
    rec.mean_loss.epoch = epoch_;
    rec.mean_loss.basic = sum.basic / n;
    rec.mean_loss.sup_b = sum.sup_b / n;
    rec.mean_loss.con_b = sum.con_b / n;
    rec.mean_loss.sup_e = sum.sup_e / n;
    rec.mean_loss.con_e = sum.con_e / n;
    rec.mean_loss.total = sum.total / n;
    rec.mean_loss.mask_rate_head =
        total_head == 0 ? 0.0 : static_cast<double>(masked_head) / static_cast<double>(total_head);
    rec.mean_loss.mask_rate_nonhead =
        total_non == 0 ? 0.0 : static_cast<double>(masked_non) / static_cast<double>(total_non);

    const Eigen::MatrixXd features = forward_features(model_, data_.test().x);
    for (Predictor p : kAllPredictors) {
      Eigen::MatrixXd logits;
      switch (p) {
        case Predictor::original: logits = head_logits(model_.head(HeadId::original), features); break;
        case Predictor::output: logits = head_logits(model_.head(HeadId::output), features); break;
        case Predictor::expansive: logits = head_logits(model_.head(HeadId::expansive), features); break;
        case Predictor::calibrated: logits = model_.head(HeadId::output).weight * features; break;
      }
      rec.eval[static_cast<std::size_t>(p)] =
          evaluate_logits(logits, data_.test().y, model_.shape.num_classes);
    }
    rec.mu_hat = separation_violation_rate(model_, Predictor::calibrated, probe_, cfg_.probe_augs,
                                           loss_cfg_.augment,
                                           derive_seed(cfg_.seed, {kProbeViews,
                                                                   static_cast<std::uint64_t>(epoch_)}));
    if (matched_) rec.bound = theory::denoising_bound(match_.expansion_factor, rec.mu_hat);
    rec.rho_b = thresholds_.rho_b;
    rec.rho_e = thresholds_.rho_e;
    for (HeadId h : kAllHeads) {
      rec.head_bias[static_cast<std::size_t>(h)] = to_vector(model_.head(h).bias);
    }
    log_.epochs.push_back(std::move(rec));
    ++epoch_;
  }

  TrainConfig cfg_;
  const Dataset& data_;
  std::size_t k_;
  std::vector<bool> head_;
  Model model_;
  SgdOptimizer optimizer_;
  EpochSampler labeled_sampler_;
  ThresholdState thresholds_;
  ThresholdState initial_thresholds_;
  LossConfig loss_cfg_;
  Eigen::MatrixXd probe_;
  MetricsLog log_;
  AnchorSet anchors_;
  AnchorMatch match_;
  std::vector<std::int64_t> estimated_;
  bool matched_ = false;
  int step_ = 0;
  int epoch_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (steps_per_epoch < 1) throw std::invalid_argument("train: steps_per_epoch must be >= 1");
  if (labeled_batch < 1 || unlabeled_batch < 1) {
    throw std::invalid_argument("train: batch sizes must be >= 1");
  }
  if (resolved_estimation_epochs() > epochs) {
    throw std::invalid_argument("train: estimation_epochs exceeds epochs");
  }
  optimizer.validate();
  thresholds.validate();
  if (!(tau_b >= 0.0 && tau_e >= 0.0)) throw std::invalid_argument("train: tau must be >= 0");
  if (!(lambda_u >= 0.0 && lambda_basic >= 0.0)) {
    throw std::invalid_argument("train: loss weights must be >= 0");
  }
  if (!(weak_strength >= 0.0 && strong_strength >= 0.0)) {
    throw std::invalid_argument("train: augmentation strengths must be >= 0");
  }
  if (!(strong_dropout >= 0.0 && strong_dropout < 1.0)) {
    throw std::invalid_argument("train: strong_dropout must lie in [0, 1)");
  }
  if (feature_dim < 1) throw std::invalid_argument("train: feature_dim must be >= 1");
  if (probe_size < 1 || probe_augs < 1) {
    throw std::invalid_argument("train: probe_size and probe_augs must be >= 1");
  }
}

int TrainConfig::resolved_estimation_epochs() const {
  return estimation_epochs >= 0 ? estimation_epochs : std::max(1, epochs / 10);
}

AnchorSet TrainConfig::anchor_set(std::size_t num_classes) const {
  if (!custom_anchors.empty()) return AnchorSet(custom_anchors);
  return AnchorSet::standard(num_classes, anchor_gamma, anchor_width);
}

EstimationResult run_estimation_phase(const TrainConfig& config, const Dataset& data) {
  Session session(config, data);
  session.run_epochs(config.resolved_estimation_epochs(), true);
  session.match();
  return {session.model(), session.estimated(), session.anchor_match()};
}

TrainResult train(const TrainConfig& config, const Dataset& data) {
  const std::size_t audit_before = data.label_audit_count();
  Session session(config, data);
  const int estimation = config.resolved_estimation_epochs();
  session.run_epochs(estimation, true);
  session.match();
  session.run_epochs(config.epochs - estimation, false);

  TrainResult out;
  out.model = session.model();
  out.log = std::move(session.log());
  out.estimated_counts = session.estimated();
  out.match = session.anchor_match();
  out.matched_anchor = session.anchors()[out.match.index].name;
  out.initial_thresholds = session.initial_thresholds();
  out.final_thresholds = session.thresholds();
  out.correlations = bias_pattern_report(out.model, data.labeled_histogram());
  out.label_audit_delta = data.label_audit_count() - audit_before;
  return out;
}

EvaluationResult evaluate(const Model& model, const LabeledSet& test, Predictor predictor) {
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  return evaluate_logits(predictor_logits(model, predictor, test.x), test.y,
                         model.shape.num_classes);
}

double EvaluationResult::mean_recall(const std::vector<bool>& mask, bool want) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < per_class_recall.size() && k < mask.size(); ++k) {
    if (mask[k] != want) continue;
    sum += per_class_recall[k];
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

BiasCorrelations bias_pattern_report(const Model& model,
                                     std::span<const std::int64_t> labeled_counts) {
  const std::vector<double> counts(labeled_counts.begin(), labeled_counts.end());
  auto corr = [&](HeadId h) {
    const auto b = to_vector(model.head(h).bias);
    return spearman(b, counts);
  };
  return {corr(HeadId::original), corr(HeadId::output), corr(HeadId::expansive)};
}

}  // namespace scssl

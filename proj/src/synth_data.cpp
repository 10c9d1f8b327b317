#include "scssl/synth_data.hpp"

#include <fmt/format.h>

#include <fstream>
#include <stdexcept>

#include "scssl/random.hpp"

namespace scssl {

namespace {

enum SplitTag : std::uint64_t { kCenters = 1, kLabeled = 2, kUnlabeled = 3, kTest = 4 };

Eigen::MatrixXd place_centers(const TaskSpec& task) {
  const int k_count = task.num_classes;
  Eigen::MatrixXd centers(task.dim, k_count);
  Rng rng(derive_seed(task.seed, {kCenters}));
  const double min_dist = task.spread / 2.0;
  for (int k = 0; k < k_count; ++k) {
    for (int attempt = 0;; ++attempt) {
      Eigen::VectorXd v(task.dim);
      for (int d = 0; d < task.dim; ++d) v[d] = rng.normal();
      v *= task.spread / v.norm();
      bool ok = true;
      for (int j = 0; j < k && ok; ++j) ok = (centers.col(j) - v).norm() >= min_dist;
      if (ok) {
        centers.col(k) = v;
        break;
      }
      if (attempt > 10000) throw std::runtime_error("generate: cannot place class centers");
    }
  }
  return centers;
}

LabeledSet draw_split(const TaskSpec& task, const Eigen::MatrixXd& centers,
                      std::span<const std::int64_t> counts, std::uint64_t tag) {
  std::int64_t n = 0;
  for (auto c : counts) n += c;
  LabeledSet out;
  out.x.resize(task.dim, n);
  out.y.reserve(static_cast<std::size_t>(n));
  Rng rng(derive_seed(task.seed, {tag}));
  Eigen::Index col = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    for (std::int64_t i = 0; i < counts[k]; ++i, ++col) {
      for (int d = 0; d < task.dim; ++d) {
        out.x(d, col) = centers(d, static_cast<Eigen::Index>(k)) + task.noise * rng.normal();
      }
      out.y.push_back(static_cast<int>(k));
    }
  }
  return out;
}

}  // namespace

void TaskSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("TaskSpec: K must be >= 2");
  if (dim < 2) throw std::invalid_argument("TaskSpec: D must be >= 2");
  if (!(spread > 0.0)) throw std::invalid_argument("TaskSpec: spread must be > 0");
  if (!(noise > 0.0)) throw std::invalid_argument("TaskSpec: noise must be > 0");
}

Dataset::Dataset(TaskSpec task, Eigen::MatrixXd centers, LabeledSet labeled,
                 Eigen::MatrixXd unlabeled, std::vector<int> unlabeled_truth, LabeledSet test)
    : task_(task),
      centers_(std::move(centers)),
      labeled_(std::move(labeled)),
      unlabeled_(std::move(unlabeled)),
      unlabeled_truth_(std::move(unlabeled_truth)),
      test_(std::move(test)) {}

const std::vector<int>& Dataset::unlabeled_labels_for_evaluation() const {
  ++audit_count_;
  return unlabeled_truth_;
}

std::vector<std::int64_t> Dataset::labeled_histogram() const {
  std::vector<std::int64_t> h(static_cast<std::size_t>(task_.num_classes), 0);
  for (int y : labeled_.y) ++h[static_cast<std::size_t>(y)];
  return h;
}

Dataset generate(const TaskSpec& task, std::span<const std::int64_t> labeled_counts,
                 std::span<const std::int64_t> unlabeled_counts, std::int64_t test_per_class) {
  task.validate();
  const auto k = static_cast<std::size_t>(task.num_classes);
  if (labeled_counts.size() != k || unlabeled_counts.size() != k) {
    throw std::invalid_argument("generate: distribution length differs from K");
  }
  for (auto c : labeled_counts) {
    if (c < 0) throw std::invalid_argument("generate: negative labeled count");
  }
  for (auto c : unlabeled_counts) {
    if (c < 0) throw std::invalid_argument("generate: negative unlabeled count");
  }
  if (test_per_class < 1) throw std::invalid_argument("generate: test_per_class must be >= 1");

  const auto centers = place_centers(task);
  auto labeled = draw_split(task, centers, labeled_counts, kLabeled);
  auto unlabeled = draw_split(task, centers, unlabeled_counts, kUnlabeled);
  const std::vector<std::int64_t> test_counts(k, test_per_class);
  auto test = draw_split(task, centers, test_counts, kTest);
  return Dataset(task, centers, std::move(labeled), std::move(unlabeled.x),
                 std::move(unlabeled.y), std::move(test));
}

Dataset generate(const TaskSpec& task, const ClassDistribution& labeled_dist,
                 const ClassDistribution& unlabeled_dist, std::int64_t test_per_class) {
  const auto labeled = labeled_dist.counts();
  const auto unlabeled = unlabeled_dist.counts();
  return generate(task, labeled, unlabeled, test_per_class);
}

std::vector<double> weak_augment(std::span<const double> x, double strength, double noise_scale,
                                 std::uint64_t seed) {
  if (!(strength >= 0.0)) throw std::invalid_argument("weak_augment: strength must be >= 0");
  std::vector<double> out(x.begin(), x.end());
  if (strength == 0.0) return out;
  Rng rng(seed);
  const double sd = strength * noise_scale;
  for (double& v : out) v += sd * rng.normal();
  return out;
}

std::vector<double> strong_augment(std::span<const double> x, double strength, double dropout,
                                   double noise_scale, std::uint64_t seed) {
  if (!(strength >= 0.0)) throw std::invalid_argument("strong_augment: strength must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument("strong_augment: dropout must lie in [0, 1)");
  }
  std::vector<double> out(x.begin(), x.end());
  Rng rng(seed);
  const double sd = strength * noise_scale;
  for (double& v : out) {
    // Both draws are always taken so the stream layout is fixed per coordinate.
    const double z = rng.normal();
    const bool drop = rng.uniform() < dropout;
    v = drop ? 0.0 : v + sd * z;
  }
  return out;
}

Eigen::MatrixXd weak_augment_batch(const Eigen::MatrixXd& x, const AugmentConfig& cfg,
                                   std::uint64_t seed) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto v = weak_augment(std::span<const double>(x.col(j).data(), x.rows()),
                                cfg.weak_strength, cfg.noise_scale,
                                derive_seed(seed, {static_cast<std::uint64_t>(j)}));
    out.col(j) = Eigen::Map<const Eigen::VectorXd>(v.data(), x.rows());
  }
  return out;
}

Eigen::MatrixXd strong_augment_batch(const Eigen::MatrixXd& x, const AugmentConfig& cfg,
                                     std::uint64_t seed) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto v = strong_augment(std::span<const double>(x.col(j).data(), x.rows()),
                                  cfg.strong_strength, cfg.strong_dropout, cfg.noise_scale,
                                  derive_seed(seed, {static_cast<std::uint64_t>(j)}));
    out.col(j) = Eigen::Map<const Eigen::VectorXd>(v.data(), x.rows());
  }
  return out;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  const int dim = data.task().dim;
  out << "split,class";
  for (int d = 0; d < dim; ++d) out << ",x_" << d;
  out << '\n';
  auto emit = [&](std::string_view split, const Eigen::MatrixXd& x, const std::vector<int>& y) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out << split << ',' << y[static_cast<std::size_t>(j)];
      for (int d = 0; d < dim; ++d) out << fmt::format(",{:.17g}", x(d, j));
      out << '\n';
    }
  };
  emit("labeled", data.labeled().x, data.labeled().y);
  emit("unlabeled", data.unlabeled(), data.unlabeled_labels_for_evaluation());
  emit("test", data.test().x, data.test().y);
}

}  // namespace scssl

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "scssl/distributions.hpp"

namespace scssl {

/// Synthetic K-class Gaussian-mixture task. Samples are columns of a D x n
/// matrix throughout the library.
struct TaskSpec {
  int num_classes = 10;
  int dim = 16;
  double spread = 4.0;
  double noise = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabeledSet {
  Eigen::MatrixXd x;  // D x n
  std::vector<int> y;

  std::size_t size() const noexcept { return y.size(); }
};

/// Generated splits. Unlabeled ground truth is only reachable through
/// unlabeled_labels_for_evaluation(), which counts every access.
class Dataset {
 public:
  Dataset(TaskSpec task, Eigen::MatrixXd centers, LabeledSet labeled, Eigen::MatrixXd unlabeled,
          std::vector<int> unlabeled_truth, LabeledSet test);

  const TaskSpec& task() const noexcept { return task_; }
  const Eigen::MatrixXd& centers() const noexcept { return centers_; }
  const LabeledSet& labeled() const noexcept { return labeled_; }
  const Eigen::MatrixXd& unlabeled() const noexcept { return unlabeled_; }
  const LabeledSet& test() const noexcept { return test_; }

  /// Evaluation only. Never call this from a training path.
  const std::vector<int>& unlabeled_labels_for_evaluation() const;
  std::size_t label_audit_count() const noexcept { return audit_count_; }

  std::vector<std::int64_t> labeled_histogram() const;

 private:
  TaskSpec task_;
  Eigen::MatrixXd centers_;  // D x K
  LabeledSet labeled_;
  Eigen::MatrixXd unlabeled_;
  std::vector<int> unlabeled_truth_;
  LabeledSet test_;
  mutable std::size_t audit_count_ = 0;
};

/// Centers sit at pseudo-random unit directions scaled by spread, pairwise at
/// least spread/2 apart. Each sample is center + noise * N(0, I). Split sizes
/// follow the given count distributions exactly.
Dataset generate(const TaskSpec& task, const ClassDistribution& labeled_dist,
                 const ClassDistribution& unlabeled_dist, std::int64_t test_per_class);
/// Raw-count variant; accepts empty splits such as an all-zero unlabeled set.
Dataset generate(const TaskSpec& task, std::span<const std::int64_t> labeled_counts,
                 std::span<const std::int64_t> unlabeled_counts, std::int64_t test_per_class);

struct AugmentConfig {
  double noise_scale = 1.0;  // task noise; augmentation std = strength * noise_scale
  double weak_strength = 0.25;
  double strong_strength = 1.0;
  double strong_dropout = 0.2;
};

std::vector<double> weak_augment(std::span<const double> x, double strength, double noise_scale,
                                 std::uint64_t seed);
std::vector<double> strong_augment(std::span<const double> x, double strength, double dropout,
                                   double noise_scale, std::uint64_t seed);

/// Column-wise augmentation. Column j uses derive_seed(seed, {j}), so the
/// result for a column does not depend on the batch it sits in.
Eigen::MatrixXd weak_augment_batch(const Eigen::MatrixXd& x, const AugmentConfig& cfg,
                                   std::uint64_t seed);
Eigen::MatrixXd strong_augment_batch(const Eigen::MatrixXd& x, const AugmentConfig& cfg,
                                     std::uint64_t seed);

/// Columns: split, class, x_0..x_{D-1}. Reads unlabeled truth (audited).
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace scssl

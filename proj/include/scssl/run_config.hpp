#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scssl/distributions.hpp"
#include "scssl/synth_data.hpp"
#include "scssl/trainer.hpp"

namespace scssl {

/// How one data split's class counts are produced.
///   consist / inverse: long tail with `gamma`, head class `max_count`
///   uniform: `max_count` per class
///   gaussian / gaussian-inverse: Gaussian anchor shape scaled to `total`
///   custom: explicit `counts`
struct SplitSpec {
  DistributionKind kind = DistributionKind::consist;
  double gamma = 100.0;
  std::int64_t max_count = 100;
  std::int64_t total = 2000;
  std::vector<std::int64_t> counts;

  ClassDistribution build(std::size_t num_classes, GaussianWidth width) const;
};

/// Everything needed to reproduce a run.
struct RunConfig {
  TaskSpec task;
  SplitSpec labeled{DistributionKind::consist, 100.0, 100, 0, {}};
  SplitSpec unlabeled{DistributionKind::inverse, 100.0, 500, 0, {}};
  std::int64_t test_per_class = 100;
  TrainConfig train;
  std::string output_dir;

  /// Sets both the data seed and the training seed.
  void set_seed(std::uint64_t seed);
  Dataset make_dataset() const;
};

/// Parses the JSON config text. Missing keys keep their defaults; unknown
/// keys at any level throw std::invalid_argument.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved document; parse_run_config(to_json(c)) reproduces c.
std::string to_json(const RunConfig& config);
/// 16 hex digits of FNV-1a over the resolved config with output_dir cleared.
std::string config_hash(const RunConfig& config);

/// Writes config.json, metrics.csv, losses.csv, thresholds.csv, bias.csv,
/// recall.csv, pseudo_labels.csv, checkpoint.json and summary.json into `dir`.
void write_run_directory(const std::filesystem::path& dir, const RunConfig& config,
                         const TrainResult& result, const Dataset& data);

/// Evaluation report used by summary.json and the evaluate command.
std::string evaluation_json(const Model& model, const Dataset& data);

}  // namespace scssl

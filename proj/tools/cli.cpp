#include "cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "scssl/distributions.hpp"
#include "scssl/random.hpp"
#include "scssl/run_config.hpp"
#include "scssl/theory.hpp"
#include "scssl/trainer.hpp"

namespace scssl::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

/// Maps to exit code 1.
struct ToleranceFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path output_root() {
  const char* env = std::getenv("SCSSL_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- verify-theorem

struct VerifyOptions {
  std::int64_t samples = 1'000'000;
  double tolerance = 0.005;
  std::uint64_t seed = 0;
  std::string grid;
  std::string out;
};

std::vector<theory::BinaryMixtureSpec> load_grid(const std::string& path) {
  std::vector<double> gammas = {0.55, 0.7, 0.9};
  std::vector<double> shifts = {-0.5, 0.0, 0.5};
  std::vector<double> rhos = {0.75, 0.95};
  std::vector<double> betas = {1.0, 4.0};
  theory::BinaryMixtureSpec base;
  if (!path.empty()) {
    ojson doc;
    try {
      doc = ojson::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(std::string("grid is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw std::invalid_argument("grid must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
      try {
        if (key == "gamma") gammas = value.get<std::vector<double>>();
        else if (key == "delta_p") shifts = value.get<std::vector<double>>();
        else if (key == "rho") rhos = value.get<std::vector<double>>();
        else if (key == "beta") betas = value.get<std::vector<double>>();
        else if (key == "mu1") base.mu1 = value.get<double>();
        else if (key == "mu2") base.mu2 = value.get<double>();
        else if (key == "sigma1") base.sigma1 = value.get<double>();
        else if (key == "sigma2") base.sigma2 = value.get<double>();
        else throw std::invalid_argument("unknown grid key '" + key + "'");
      } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("bad grid value for '" + key + "': " + e.what());
      }
    }
  }
  std::vector<theory::BinaryMixtureSpec> grid;
  for (double g : gammas)
    for (double d : shifts)
      for (double r : rhos)
        for (double b : betas) {
          auto s = base;
          s.gamma = g;
          s.delta_p = d;
          s.rho = r;
          s.beta = b;
          s.validate();
          grid.push_back(s);
        }
  if (grid.empty()) throw std::invalid_argument("grid is empty");
  return grid;
}

int cmd_verify_theorem(const VerifyOptions& o) {
  if (o.samples < 1) throw std::invalid_argument("--samples must be >= 1");
  if (!(o.tolerance >= 0.0)) throw std::invalid_argument("--tolerance must be >= 0");
  const auto grid = load_grid(o.grid);
  const fs::path out = o.out.empty()
                           ? output_root() / fmt::format("verify-theorem-seed{}", o.seed) /
                                 "theorem.csv"
                           : fs::path(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream csv(out, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + out.string());
  csv << "gamma,mu1,mu2,sigma1,sigma2,beta,rho,delta_p,p_pos_analytic,p_neg_analytic,"
         "p_mask_analytic,p_pos_mc,p_neg_mc,p_mask_mc,max_abs_diff\n";
  double worst = 0.0;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& s = grid[i];
    const auto a = theory::pseudo_label_probabilities(s);
    const auto m = theory::monte_carlo_pseudo_label_probabilities(s, o.samples,
                                                                  derive_seed(o.seed, {i}));
    const double diff = std::max({std::abs(a.p_pos - m.p_pos), std::abs(a.p_neg - m.p_neg),
                                  std::abs(a.p_mask - m.p_mask)});
    worst = std::max(worst, diff);
    if (diff > o.tolerance) ++failures;
    csv << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},"
                       "{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n",
                       s.gamma, s.mu1, s.mu2, s.sigma1, s.sigma2, s.beta, s.rho, s.delta_p,
                       a.p_pos, a.p_neg, a.p_mask, m.p_pos, m.p_neg, m.p_mask, diff);
  }
  fmt::print("{} specs, {} samples each, max |analytic - mc| = {:.6f}, tolerance {}\n",
             grid.size(), o.samples, worst, o.tolerance);
  fmt::print("wrote {}\n", out.string());
  if (failures > 0) {
    throw ToleranceFailure(fmt::format("{} of {} specs exceed the tolerance", failures,
                                       grid.size()));
  }
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_train(const TrainOptions& o) {
  RunConfig config = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) config.set_seed(*o.seed);
  fs::path dir;
  if (!o.out.empty()) dir = o.out;
  else if (!config.output_dir.empty()) dir = config.output_dir;
  else dir = output_root() / ("run-" + config_hash(config));

  const Dataset data = config.make_dataset();
  fmt::print("training: K={} D={} labeled={} unlabeled={} epochs={} seed={}\n",
             config.task.num_classes, config.task.dim, data.labeled().size(),
             data.unlabeled().cols(), config.train.epochs, config.train.seed);
  TrainResult result;
  try {
    result = train(config.train, data);
  } catch (const TrainingAborted& e) {
    fs::create_directories(dir);
    save_checkpoint(e.snapshot(), dir / "aborted_checkpoint.json", config_hash(config),
                    ojson::parse(to_json(config)).dump());
    throw;
  }
  write_run_directory(dir, config, result, data);

  const auto head = head_mask(static_cast<std::size_t>(config.task.num_classes));
  const auto& last = result.log.epochs.back();
  fmt::print("matched anchor: {} (c={}, gamma_u={:.4g})\n", result.matched_anchor,
             result.match.expansion_factor, result.match.gamma_u);
  fmt::print("{:<11} {:>9} {:>9} {:>12} {:>12}\n", "predictor", "accuracy", "balanced",
             "head_recall", "nonhead_recall");
  for (Predictor p : kAllPredictors) {
    const auto& r = last.evaluation(p);
    fmt::print("{:<11} {:>9.4f} {:>9.4f} {:>12.4f} {:>12.4f}\n", to_string(p), r.accuracy,
               r.balanced_accuracy, r.mean_recall(head, true), r.mean_recall(head, false));
  }
  fmt::print("wrote {}\n", dir.string());
  return kOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateOptions {
  std::string checkpoint;
  bool calibrated = false;
  std::string out;
};

int cmd_evaluate(const EvaluateOptions& o) {
  if (!fs::exists(o.checkpoint)) {
    throw std::runtime_error("checkpoint not found: " + o.checkpoint);
  }
  const LoadedCheckpoint ckpt = load_checkpoint(o.checkpoint);
  if (ckpt.run_json.empty()) {
    throw std::runtime_error("checkpoint carries no run config; cannot rebuild the test split");
  }
  const RunConfig config = parse_run_config(ckpt.run_json);
  if (config_hash(config) != ckpt.config_hash) {
    throw std::runtime_error("checkpoint config hash does not match its embedded config");
  }
  const Dataset data = config.make_dataset();
  ojson report;
  report["config_hash"] = ckpt.config_hash;
  report["evaluation"] = ojson::parse(evaluation_json(ckpt.model, data));
  if (!o.calibrated) report["evaluation"].erase("calibrated");

  const auto head = head_mask(static_cast<std::size_t>(config.task.num_classes));
  fmt::print("{:<11} {:>9} {:>9} {:>12} {:>12}\n", "predictor", "accuracy", "balanced",
             "head_recall", "nonhead_recall");
  for (Predictor p : kAllPredictors) {
    if (p == Predictor::calibrated && !o.calibrated) continue;
    const auto r = evaluate(ckpt.model, data.test(), p);
    fmt::print("{:<11} {:>9.4f} {:>9.4f} {:>12.4f} {:>12.4f}\n", to_string(p), r.accuracy,
               r.balanced_accuracy, r.mean_recall(head, true), r.mean_recall(head, false));
  }
  const fs::path out =
      o.out.empty() ? fs::path(o.checkpoint).parent_path() / "evaluation.json" : fs::path(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream file(out, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write " + out.string());
  file << report.dump(2) << '\n';
  fmt::print("wrote {}\n", out.string());
  return kOk;
}

// ---------------------------------------------------------------- match-distribution

struct MatchOptions {
  std::string counts;
  double anchor_gamma = 100.0;
  std::string width = "std";
};

int cmd_match_distribution(const MatchOptions& o) {
  const std::string text = read_file(o.counts);
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("counts file is not valid JSON: ") + e.what());
  }
  if (doc.is_object()) {
    for (const auto& [key, _] : doc.items()) {
      if (key != "counts") throw std::invalid_argument("unknown key '" + key + "' in counts file");
    }
    if (!doc.contains("counts")) throw std::invalid_argument("counts file lacks 'counts'");
    doc = doc["counts"];
  }
  std::vector<double> counts;
  try {
    counts = doc.get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("counts must be an array of numbers: ") + e.what());
  }
  if (counts.size() < 2) throw std::invalid_argument("counts needs at least 2 classes");
  GaussianWidth width;
  if (o.width == "std") width = GaussianWidth::std_dev;
  else if (o.width == "variance") width = GaussianWidth::variance;
  else throw std::invalid_argument("--gaussian-width must be 'std' or 'variance'");

  const AnchorSet anchors = AnchorSet::standard(counts.size(), o.anchor_gamma, width);
  const AnchorMatch m = match_anchor(counts, anchors);
  fmt::print("anchor              kl\n");
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    fmt::print("{:<16} {:.10f}{}\n", anchors[i].name, m.divergences[i], i == m.index ? " *" : "");
  }
  fmt::print("o* = {}\nc = {}\ngamma_u = {:.10g}\n", anchors[m.index].name, m.expansion_factor,
             m.gamma_u);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Semi-supervised long-tail learning with sampling control"};
  app.require_subcommand(1);

  VerifyOptions verify;
  auto* v = app.add_subcommand("verify-theorem",
                               "Compare closed-form pseudo-label probabilities with Monte Carlo");
  v->add_option("--samples", verify.samples, "Monte Carlo samples per spec")
      ->capture_default_str();
  v->add_option("--tolerance", verify.tolerance, "Max allowed |analytic - mc| per component")
      ->capture_default_str();
  v->add_option("--seed", verify.seed, "Base seed")->capture_default_str();
  v->add_option("--grid", verify.grid, "JSON grid file (axes gamma, delta_p, rho, beta)");
  v->add_option("--out", verify.out, "CSV output path");

  TrainOptions train_opts;
  std::uint64_t seed_value = 0;
  auto* t = app.add_subcommand("train", "Run the full training pipeline");
  t->add_option("--config", train_opts.config, "JSON run config (defaults when omitted)");
  auto* seed_opt = t->add_option("--seed", seed_value, "Override data and training seed");
  t->add_option("--out", train_opts.out, "Run directory");

  EvaluateOptions eval;
  auto* e = app.add_subcommand("evaluate", "Evaluate a checkpoint on its run's test split");
  e->add_option("--checkpoint", eval.checkpoint, "checkpoint.json path")->required();
  e->add_flag("--calibrated", eval.calibrated, "Also report the bias-corrected output head");
  e->add_option("--out", eval.out, "JSON output path (default: next to the checkpoint)");

  MatchOptions match;
  auto* m = app.add_subcommand("match-distribution", "Match class counts to the anchor set");
  m->add_option("--counts", match.counts, "JSON file: array of counts or {\"counts\": [...]}")
      ->required();
  m->add_option("--anchor-gamma", match.anchor_gamma, "Imbalance ratio of the anchors")
      ->capture_default_str();
  m->add_option("--gaussian-width", match.width, "std or variance")->capture_default_str();

  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsageError;
  }
  if (seed_opt->count() > 0) train_opts.seed = seed_value;

  try {
    if (*v) return cmd_verify_theorem(verify);
    if (*t) return cmd_train(train_opts);
    if (*e) return cmd_evaluate(eval);
    if (*m) return cmd_match_distribution(match);
  } catch (const ToleranceFailure& err) {
    fmt::print(stderr, "tolerance failure: {}\n", err.what());
    return kToleranceFailure;
  } catch (const std::invalid_argument& err) {
    fmt::print(stderr, "error: {}\n", err.what());
    return kUsageError;
  } catch (const std::exception& err) {
    fmt::print(stderr, "aborted: {}\n", err.what());
    return kRuntimeAbort;
  }
  return kUsageError;
}

}  // namespace scssl::cli

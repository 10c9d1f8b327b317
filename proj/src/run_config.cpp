#include "scssl/run_config.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace scssl {

namespace {

using ojson = nlohmann::ordered_json;

void check_keys(const ojson& obj, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
  if (!obj.is_object()) throw std::invalid_argument(std::string(where) + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) {
      throw std::invalid_argument("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void read(const ojson& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::string_view to_string(GaussianWidth w) {
  return w == GaussianWidth::std_dev ? "std" : "variance";
}

GaussianWidth parse_width(const std::string& s) {
  if (s == "std") return GaussianWidth::std_dev;
  if (s == "variance") return GaussianWidth::variance;
  throw std::invalid_argument("gaussian_width must be 'std' or 'variance'");
}

std::string_view to_string(PseudoLabelSource s) {
  return s == PseudoLabelSource::self ? "self" : "expansive";
}

PseudoLabelSource parse_source(const std::string& s) {
  if (s == "self") return PseudoLabelSource::self;
  if (s == "expansive") return PseudoLabelSource::expansive;
  throw std::invalid_argument("output_label_source must be 'self' or 'expansive'");
}

SplitSpec parse_split(const ojson& j, SplitSpec base, std::string_view where) {
  check_keys(j, {"kind", "gamma", "max_count", "total", "counts"}, where);
  if (j.contains("kind")) base.kind = parse_distribution_kind(j.at("kind").get<std::string>());
  read(j, "gamma", base.gamma);
  read(j, "max_count", base.max_count);
  read(j, "total", base.total);
  read(j, "counts", base.counts);
  return base;
}

ojson split_json(const SplitSpec& s) {
  return {{"kind", std::string(to_string(s.kind))},
          {"gamma", s.gamma},
          {"max_count", s.max_count},
          {"total", s.total},
          {"counts", s.counts}};
}

ojson config_json(const RunConfig& c) {
  const auto& t = c.train;
  ojson anchors = ojson::array();
  for (const auto& a : t.custom_anchors) {
    anchors.push_back({{"name", a.name},
                       {"proportions", std::vector<double>(a.distribution.mass().begin(),
                                                           a.distribution.mass().end())},
                       {"expansion_factor", a.expansion_factor}});
  }
  ojson doc;
  doc["task"] = {{"classes", c.task.num_classes},
                 {"dim", c.task.dim},
                 {"spread", c.task.spread},
                 {"noise", c.task.noise},
                 {"seed", c.task.seed}};
  doc["labeled"] = split_json(c.labeled);
  doc["unlabeled"] = split_json(c.unlabeled);
  doc["test_per_class"] = c.test_per_class;
  doc["train"] = {{"epochs", t.epochs},
                  {"steps_per_epoch", t.steps_per_epoch},
                  {"labeled_batch", t.labeled_batch},
                  {"unlabeled_batch", t.unlabeled_batch},
                  {"estimation_epochs", t.resolved_estimation_epochs()},
                  {"learning_rate", t.optimizer.learning_rate},
                  {"momentum", t.optimizer.momentum},
                  {"weight_decay", t.optimizer.weight_decay},
                  {"tau_b", t.tau_b},
                  {"tau_e", t.tau_e},
                  {"lambda_u", t.lambda_u},
                  {"lambda_basic", t.lambda_basic},
                  {"weak_strength", t.weak_strength},
                  {"strong_strength", t.strong_strength},
                  {"strong_dropout", t.strong_dropout},
                  {"alpha", t.thresholds.alpha},
                  {"nu", t.thresholds.nu},
                  {"rho_max", t.thresholds.rho_max},
                  {"rho_floor", t.thresholds.rho_floor},
                  {"sampling_control", t.sampling_control},
                  {"reweight_unlabeled", t.reweight_unlabeled},
                  {"output_label_source", std::string(to_string(t.output_label_source))},
                  {"hidden", t.hidden},
                  {"feature_dim", t.feature_dim},
                  {"activation", std::string(to_string(t.activation))},
                  {"anchor_gamma", t.anchor_gamma},
                  {"gaussian_width", std::string(to_string(t.anchor_width))},
                  {"anchors", anchors},
                  {"probe_size", t.probe_size},
                  {"probe_augs", t.probe_augs},
                  {"seed", t.seed}};
  doc["output_dir"] = c.output_dir;
  return doc;
}

std::string num(double v) { return fmt::format("{:.10g}", v); }

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

ojson evaluation_object(const Model& model, const Dataset& data) {
  const auto head = head_mask(static_cast<std::size_t>(data.task().num_classes));
  ojson doc;
  for (Predictor p : kAllPredictors) {
    const auto r = evaluate(model, data.test(), p);
    doc[std::string(to_string(p))] = {{"accuracy", r.accuracy},
                                      {"balanced_accuracy", r.balanced_accuracy},
                                      {"head_recall", r.mean_recall(head, true)},
                                      {"nonhead_recall", r.mean_recall(head, false)},
                                      {"per_class_recall", r.per_class_recall},
                                      {"confusion", r.confusion}};
  }
  return doc;
}

}  // namespace

ClassDistribution SplitSpec::build(std::size_t num_classes, GaussianWidth width) const {
  switch (kind) {
    case DistributionKind::consist: return make_longtail(num_classes, max_count, gamma);
    case DistributionKind::inverse: return invert(make_longtail(num_classes, max_count, gamma));
    case DistributionKind::uniform: return make_uniform(num_classes, max_count);
    case DistributionKind::gaussian:
      return counts_from_proportions(make_gaussian_anchor(num_classes, false, width), total);
    case DistributionKind::gaussian_inverse:
      return counts_from_proportions(make_gaussian_anchor(num_classes, true, width), total);
    case DistributionKind::custom:
      if (counts.size() != num_classes) {
        throw std::invalid_argument("custom split: counts length differs from K");
      }
      return ClassDistribution::from_counts(counts);
  }
  throw std::invalid_argument("unknown split kind");
}

void RunConfig::set_seed(std::uint64_t seed) {
  task.seed = seed;
  train.seed = seed;
}

Dataset RunConfig::make_dataset() const {
  const auto k = static_cast<std::size_t>(task.num_classes);
  return generate(task, labeled.build(k, train.anchor_width), unlabeled.build(k, train.anchor_width),
                  test_per_class);
}

RunConfig parse_run_config(const std::string& json_text) {
  ojson doc;
  try {
    doc = ojson::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(doc, {"task", "labeled", "unlabeled", "test_per_class", "train", "output_dir"},
             "config");
  RunConfig c;
  if (doc.contains("task")) {
    const auto& t = doc["task"];
    check_keys(t, {"classes", "dim", "spread", "noise", "seed"}, "task");
    read(t, "classes", c.task.num_classes);
    read(t, "dim", c.task.dim);
    read(t, "spread", c.task.spread);
    read(t, "noise", c.task.noise);
    read(t, "seed", c.task.seed);
  }
  if (doc.contains("labeled")) c.labeled = parse_split(doc["labeled"], c.labeled, "labeled");
  if (doc.contains("unlabeled")) {
    c.unlabeled = parse_split(doc["unlabeled"], c.unlabeled, "unlabeled");
  }
  read(doc, "test_per_class", c.test_per_class);
  read(doc, "output_dir", c.output_dir);

  if (doc.contains("train")) {
    const auto& j = doc["train"];
    check_keys(j,
               {"epochs", "steps_per_epoch", "labeled_batch", "unlabeled_batch",
                "estimation_epochs", "learning_rate", "momentum", "weight_decay", "tau_b",
                "tau_e", "lambda_u", "lambda_basic", "weak_strength", "strong_strength",
                "strong_dropout", "alpha", "nu", "rho_max", "rho_floor", "sampling_control",
                "reweight_unlabeled", "output_label_source", "hidden", "feature_dim",
                "activation", "anchor_gamma", "gaussian_width", "anchors", "probe_size",
                "probe_augs", "seed"},
               "train");
    auto& t = c.train;
    read(j, "epochs", t.epochs);
    read(j, "steps_per_epoch", t.steps_per_epoch);
    read(j, "labeled_batch", t.labeled_batch);
    read(j, "unlabeled_batch", t.unlabeled_batch);
    read(j, "estimation_epochs", t.estimation_epochs);
    read(j, "learning_rate", t.optimizer.learning_rate);
    read(j, "momentum", t.optimizer.momentum);
    read(j, "weight_decay", t.optimizer.weight_decay);
    read(j, "tau_b", t.tau_b);
    read(j, "tau_e", t.tau_e);
    read(j, "lambda_u", t.lambda_u);
    read(j, "lambda_basic", t.lambda_basic);
    read(j, "weak_strength", t.weak_strength);
    read(j, "strong_strength", t.strong_strength);
    read(j, "strong_dropout", t.strong_dropout);
    read(j, "alpha", t.thresholds.alpha);
    read(j, "nu", t.thresholds.nu);
    read(j, "rho_max", t.thresholds.rho_max);
    read(j, "rho_floor", t.thresholds.rho_floor);
    read(j, "sampling_control", t.sampling_control);
    read(j, "reweight_unlabeled", t.reweight_unlabeled);
    if (j.contains("output_label_source")) {
      t.output_label_source = parse_source(j.at("output_label_source").get<std::string>());
    }
    read(j, "hidden", t.hidden);
    read(j, "feature_dim", t.feature_dim);
    if (j.contains("activation")) {
      t.activation = parse_activation(j.at("activation").get<std::string>());
    }
    read(j, "anchor_gamma", t.anchor_gamma);
    if (j.contains("gaussian_width")) {
      t.anchor_width = parse_width(j.at("gaussian_width").get<std::string>());
    }
    if (j.contains("anchors")) {
      for (const auto& a : j.at("anchors")) {
        check_keys(a, {"name", "proportions", "expansion_factor"}, "train.anchors[]");
        Anchor anchor{a.at("name").get<std::string>(),
                      ClassDistribution::from_proportions(
                          a.at("proportions").get<std::vector<double>>()),
                      a.at("expansion_factor").get<int>()};
        t.custom_anchors.push_back(std::move(anchor));
      }
      if (!t.custom_anchors.empty()) AnchorSet validated(t.custom_anchors);
    }
    read(j, "probe_size", t.probe_size);
    read(j, "probe_augs", t.probe_augs);
    read(j, "seed", t.seed);
  }
  c.task.validate();
  c.train.validate();
  if (c.test_per_class < 1) throw std::invalid_argument("test_per_class must be >= 1");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& config) { return config_json(config).dump(2); }

std::string config_hash(const RunConfig& config) {
  RunConfig c = config;
  c.output_dir.clear();
  const std::string text = config_json(c).dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string evaluation_json(const Model& model, const Dataset& data) {
  return evaluation_object(model, data).dump(2);
}

void write_run_directory(const std::filesystem::path& dir, const RunConfig& config,
                         const TrainResult& result, const Dataset& data) {
  std::filesystem::create_directories(dir);
  const std::string hash = config_hash(config);
  const auto k = static_cast<std::size_t>(config.task.num_classes);

  open_out(dir / "config.json") << to_json(config) << '\n';

  {
    auto out = open_out(dir / "metrics.csv");
    out << "epoch,phase,L_basic,L_sup_b,L_con_b,L_sup_e,L_con_e,total,mask_rate_head,"
           "mask_rate_nonhead";
    for (Predictor p : kAllPredictors) {
      const auto n = to_string(p);
      out << ',' << n << "_acc," << n << "_bacc," << n << "_head_recall," << n
          << "_nonhead_recall";
    }
    out << ",unmasked_original,unmasked_output,unmasked_expansive,mu_hat,bound\n";
    const auto head = head_mask(k);
    for (const auto& e : result.log.epochs) {
      const auto& l = e.mean_loss;
      out << e.epoch << ',' << (e.estimation ? "estimation" : "training") << ',' << num(l.basic)
          << ',' << num(l.sup_b) << ',' << num(l.con_b) << ',' << num(l.sup_e) << ','
          << num(l.con_e) << ',' << num(l.total) << ',' << num(l.mask_rate_head) << ','
          << num(l.mask_rate_nonhead);
      for (Predictor p : kAllPredictors) {
        const auto& r = e.evaluation(p);
        out << ',' << num(r.accuracy) << ',' << num(r.balanced_accuracy) << ','
            << num(r.mean_recall(head, true)) << ',' << num(r.mean_recall(head, false));
      }
      for (auto u : e.unmasked_total) out << ',' << u;
      out << ',' << num(e.mu_hat) << ',' << (e.bound ? num(*e.bound) : std::string()) << '\n';
    }
  }
  {
    auto out = open_out(dir / "losses.csv");
    out << "step,epoch,L_basic,L_sup_b,L_con_b,L_sup_e,L_con_e,total,mask_rate_head,"
           "mask_rate_nonhead\n";
    for (const auto& s : result.log.steps) {
      out << s.step << ',' << s.epoch << ',' << num(s.basic) << ',' << num(s.sup_b) << ','
          << num(s.con_b) << ',' << num(s.sup_e) << ',' << num(s.con_e) << ',' << num(s.total)
          << ',' << num(s.mask_rate_head) << ',' << num(s.mask_rate_nonhead) << '\n';
    }
  }
  {
    auto out = open_out(dir / "thresholds.csv");
    out << "epoch,class,rho_b,rho_e,b_opt\n";
    for (const auto& e : result.log.epochs) {
      const auto& b = e.head_bias[static_cast<std::size_t>(HeadId::output)];
      for (std::size_t c = 0; c < k; ++c) {
        out << e.epoch << ',' << c << ',' << num(e.rho_b[c]) << ',' << num(e.rho_e[c]) << ','
            << num(b[c]) << '\n';
      }
    }
  }
  {
    auto out = open_out(dir / "bias.csv");
    out << "epoch,class,b_original,b_output,b_expansive\n";
    for (const auto& e : result.log.epochs) {
      for (std::size_t c = 0; c < k; ++c) {
        out << e.epoch << ',' << c << ',' << num(e.head_bias[0][c]) << ','
            << num(e.head_bias[1][c]) << ',' << num(e.head_bias[2][c]) << '\n';
      }
    }
  }
  {
    auto out = open_out(dir / "recall.csv");
    out << "epoch,predictor,class,recall\n";
    for (const auto& e : result.log.epochs) {
      for (Predictor p : kAllPredictors) {
        const auto& r = e.evaluation(p);
        for (std::size_t c = 0; c < k; ++c) {
          out << e.epoch << ',' << to_string(p) << ',' << c << ',' << num(r.per_class_recall[c])
              << '\n';
        }
      }
    }
  }
  {
    auto out = open_out(dir / "pseudo_labels.csv");
    out << "epoch,head,class,count\n";
    for (const auto& e : result.log.epochs) {
      for (HeadId h : kAllHeads) {
        const auto& hist = e.pseudo_histogram[static_cast<std::size_t>(h)];
        for (std::size_t c = 0; c < k; ++c) {
          out << e.epoch << ',' << to_string(h) << ',' << c << ',' << hist[c] << '\n';
        }
      }
    }
  }

  save_checkpoint(result.model, dir / "checkpoint.json", hash, config_json(config).dump());

  ojson summary;
  summary["config_hash"] = hash;
  summary["matched_anchor"] = result.matched_anchor;
  summary["anchor_index"] = result.match.index;
  summary["expansion_factor"] = result.match.expansion_factor;
  summary["gamma_u"] = result.match.gamma_u;
  summary["kl_divergences"] = result.match.divergences;
  summary["estimated_counts"] = result.estimated_counts;
  summary["initial_thresholds"] = {{"rho_b", result.initial_thresholds.rho_b},
                                   {"rho_e", result.initial_thresholds.rho_e}};
  summary["final_thresholds"] = {{"rho_b", result.final_thresholds.rho_b},
                                 {"rho_e", result.final_thresholds.rho_e}};
  auto corr = [](const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); };
  summary["bias_correlations"] = {{"original", corr(result.correlations.original)},
                                  {"output", corr(result.correlations.output)},
                                  {"expansive", corr(result.correlations.expansive)}};
  summary["label_audit_delta"] = result.label_audit_delta;
  summary["evaluation"] = evaluation_object(result.model, data);
  open_out(dir / "summary.json") << summary.dump(2) << '\n';
}

}  // namespace scssl

#include "scssl/network.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "scssl/random.hpp"

namespace scssl {

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation: " + std::string(name));
}

std::string_view to_string(HeadId h) {
  switch (h) {
    case HeadId::original: return "original";
    case HeadId::output: return "output";
    case HeadId::expansive: return "expansive";
  }
  return "original";
}

void NetworkShape::validate() const {
  if (input_dim < 1 || feature_dim < 1 || num_classes < 2) {
    throw std::invalid_argument("NetworkShape: dimensions must be positive and K >= 2");
  }
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("NetworkShape: hidden widths must be positive");
  }
}

std::vector<int> NetworkShape::widths() const {
  std::vector<int> w;
  w.reserve(hidden.size() + 2);
  w.push_back(input_dim);
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(feature_dim);
  return w;
}

Model Model::zeros(const NetworkShape& shape) {
  shape.validate();
  Model m;
  m.shape = shape;
  const auto w = shape.widths();
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    m.backbone.push_back({Eigen::MatrixXd::Zero(w[i + 1], w[i]), Eigen::VectorXd::Zero(w[i + 1])});
  }
  for (auto& h : m.heads) {
    h.weight = Eigen::MatrixXd::Zero(shape.num_classes, shape.feature_dim);
    h.bias = Eigen::VectorXd::Zero(shape.num_classes);
  }
  return m;
}

Model Model::initialize(const NetworkShape& shape, std::uint64_t seed) {
  Model m = zeros(shape);
  Rng rng(seed);
  auto fill = [&rng](Eigen::MatrixXd& w) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
    // Row-major fill order keeps the stream independent of Eigen's layout.
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = bound * (2.0 * rng.uniform() - 1.0);
    }
  };
  for (auto& layer : m.backbone) fill(layer.weight);
  for (auto& h : m.heads) fill(h.weight);
  return m;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for_each_parameter(*this, [&n](const std::string&, std::span<const double> s) { n += s.size(); });
  return n;
}

bool Model::all_finite() const {
  bool ok = true;
  for_each_parameter(*this, [&ok](const std::string&, std::span<const double> s) {
    for (double v : s) ok = ok && std::isfinite(v);
  });
  return ok;
}

namespace {

void activate(Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::relu) {
    z = z.cwiseMax(0.0);
  } else {
    z = z.array().tanh().matrix();
  }
}

// Derivative of the activation expressed through its output.
Eigen::MatrixXd activation_grad(const Eigen::MatrixXd& out, Activation a) {
  if (a == Activation::relu) return (out.array() > 0.0).cast<double>().matrix();
  return (1.0 - out.array().square()).matrix();
}

void check_input(const Model& model, const Eigen::MatrixXd& x) {
  if (x.rows() != model.shape.input_dim) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.rows()) +
                                " rows, expected " + std::to_string(model.shape.input_dim));
  }
}

}  // namespace

ForwardPass forward(const Model& model, const Eigen::MatrixXd& x) {
  check_input(model, x);
  ForwardPass pass;
  pass.activations.reserve(model.backbone.size() + 1);
  pass.activations.push_back(x);
  for (const auto& layer : model.backbone) {
    Eigen::MatrixXd z = layer.weight * pass.activations.back();
    z.colwise() += layer.bias;
    activate(z, model.shape.activation);
    pass.activations.push_back(std::move(z));
  }
  for (HeadId h : kAllHeads) {
    pass.logits[static_cast<std::size_t>(h)] = head_logits(model.head(h), pass.features());
  }
  return pass;
}

Eigen::MatrixXd forward_features(const Model& model, const Eigen::MatrixXd& x) {
  check_input(model, x);
  Eigen::MatrixXd a = x;
  for (const auto& layer : model.backbone) {
    Eigen::MatrixXd z = layer.weight * a;
    z.colwise() += layer.bias;
    activate(z, model.shape.activation);
    a = std::move(z);
  }
  return a;
}

Eigen::VectorXd forward_features(const Model& model, const Eigen::VectorXd& x) {
  return forward_features(model, Eigen::MatrixXd(x));
}

Eigen::MatrixXd head_logits(const Head& head, const Eigen::MatrixXd& features) {
  if (features.rows() != head.weight.cols()) {
    throw std::invalid_argument("head_logits: feature width mismatch");
  }
  Eigen::MatrixXd z = head.weight * features;
  z.colwise() += head.bias;
  return z;
}

Eigen::VectorXd head_logits(const Head& head, const Eigen::VectorXd& features) {
  return head_logits(head, Eigen::MatrixXd(features));
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    p.col(j) = (logits.col(j).array() - m).exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  return softmax(Eigen::MatrixXd(logits)).col(0);
}

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

int predict(const Model& model, HeadId head, const Eigen::VectorXd& x) {
  return argmax(head_logits(model.head(head), forward_features(model, x)));
}

void backward(const Model& model, const ForwardPass& pass, const HeadLogitGradients& upstream,
              Gradients& grads) {
  const Eigen::MatrixXd& features = pass.features();
  Eigen::MatrixXd d_features = Eigen::MatrixXd::Zero(features.rows(), features.cols());
  bool any = false;
  for (HeadId h : kAllHeads) {
    const auto idx = static_cast<std::size_t>(h);
    const Eigen::MatrixXd* g = upstream[idx];
    if (g == nullptr) continue;
    if (g->rows() != model.shape.num_classes || g->cols() != features.cols()) {
      throw std::invalid_argument("backward: logit gradient shape mismatch");
    }
    grads.heads[idx].weight.noalias() += *g * features.transpose();
    grads.heads[idx].bias += g->rowwise().sum();
    d_features.noalias() += model.heads[idx].weight.transpose() * *g;
    any = true;
  }
  if (!any) return;

  Eigen::MatrixXd d_out = std::move(d_features);
  for (std::size_t i = model.backbone.size(); i-- > 0;) {
    const Eigen::MatrixXd& out = pass.activations[i + 1];
    const Eigen::MatrixXd& in = pass.activations[i];
    const Eigen::MatrixXd d_pre =
        (d_out.array() * activation_grad(out, model.shape.activation).array()).matrix();
    grads.backbone[i].weight.noalias() += d_pre * in.transpose();
    grads.backbone[i].bias += d_pre.rowwise().sum();
    if (i > 0) d_out = model.backbone[i].weight.transpose() * d_pre;
  }
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("optimizer: learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("optimizer: momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("optimizer: weight decay must be >= 0");
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              const OptimizerConfig& cfg) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw std::invalid_argument("sgd_step: size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = cfg.momentum * velocity[i] + grads[i] + cfg.weight_decay * params[i];
    params[i] -= cfg.learning_rate * velocity[i];
  }
}

SgdOptimizer::SgdOptimizer(const NetworkShape& shape, OptimizerConfig cfg)
    : cfg_(cfg), velocity_(Model::zeros(shape)) {
  cfg_.validate();
}

void SgdOptimizer::step(Model& model, const Gradients& grads) {
  std::vector<std::span<double>> p;
  std::vector<std::span<const double>> g;
  std::vector<std::span<double>> v;
  for_each_parameter(model, [&p](const std::string&, std::span<double> s) { p.push_back(s); });
  for_each_parameter(grads, [&g](const std::string&, std::span<const double> s) { g.push_back(s); });
  for_each_parameter(velocity_, [&v](const std::string&, std::span<double> s) { v.push_back(s); });
  if (p.size() != g.size() || p.size() != v.size()) {
    throw std::invalid_argument("SgdOptimizer: parameter layout mismatch");
  }
  for (std::size_t i = 0; i < p.size(); ++i) sgd_step(p[i], g[i], v[i], cfg_);
}

namespace {

using ojson = nlohmann::ordered_json;

struct BlockRef {
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;
};

std::vector<std::pair<std::string, BlockRef>> blocks(Model& m) {
  std::vector<std::pair<std::string, BlockRef>> out;
  for (std::size_t i = 0; i < m.backbone.size(); ++i) {
    auto& l = m.backbone[i];
    const std::string prefix = "backbone." + std::to_string(i);
    out.push_back({prefix + ".weight", {l.weight.data(), l.weight.rows(), l.weight.cols()}});
    out.push_back({prefix + ".bias", {l.bias.data(), l.bias.size(), 1}});
  }
  for (HeadId h : kAllHeads) {
    auto& head = m.head(h);
    const std::string prefix = "head." + std::string(to_string(h));
    out.push_back({prefix + ".weight", {head.weight.data(), head.weight.rows(), head.weight.cols()}});
    out.push_back({prefix + ".bias", {head.bias.data(), head.bias.size(), 1}});
  }
  return out;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     std::string_view config_hash, std::string_view extra_json) {
  ojson doc;
  doc["format"] = "scssl-checkpoint";
  doc["version"] = 1;
  doc["config_hash"] = std::string(config_hash);
  doc["shape"] = {{"input_dim", model.shape.input_dim},
                  {"hidden", model.shape.hidden},
                  {"feature_dim", model.shape.feature_dim},
                  {"num_classes", model.shape.num_classes},
                  {"activation", std::string(to_string(model.shape.activation))}};
  Model copy = model;
  ojson params = ojson::array();
  for (const auto& [name, b] : blocks(copy)) {
    Eigen::Map<const Eigen::MatrixXd> mat(b.data, b.rows, b.cols);
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(b.rows * b.cols));
    for (Eigen::Index r = 0; r < b.rows; ++r) {
      for (Eigen::Index c = 0; c < b.cols; ++c) values.push_back(mat(r, c));
    }
    params.push_back({{"name", name}, {"rows", b.rows}, {"cols", b.cols}, {"values", values}});
  }
  doc["parameters"] = std::move(params);
  if (!extra_json.empty()) doc["run"] = ojson::parse(extra_json);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << doc.dump(1) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  ojson doc;
  try {
    doc = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "scssl-checkpoint" ||
        doc.at("version").get<int>() != 1) {
      throw std::runtime_error("unsupported checkpoint format");
    }
    NetworkShape shape;
    const auto& s = doc.at("shape");
    shape.input_dim = s.at("input_dim").get<int>();
    shape.hidden = s.at("hidden").get<std::vector<int>>();
    shape.feature_dim = s.at("feature_dim").get<int>();
    shape.num_classes = s.at("num_classes").get<int>();
    shape.activation = parse_activation(s.at("activation").get<std::string>());

    LoadedCheckpoint out{Model::zeros(shape), doc.at("config_hash").get<std::string>(), {}};
    auto expected = blocks(out.model);
    const auto& params = doc.at("parameters");
    if (params.size() != expected.size()) throw std::runtime_error("parameter count mismatch");
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& p = params[i];
      const auto& [name, b] = expected[i];
      if (p.at("name").get<std::string>() != name || p.at("rows").get<Eigen::Index>() != b.rows ||
          p.at("cols").get<Eigen::Index>() != b.cols) {
        throw std::runtime_error("parameter block " + name + " does not match the shape");
      }
      const auto values = p.at("values").get<std::vector<double>>();
      if (values.size() != static_cast<std::size_t>(b.rows * b.cols)) {
        throw std::runtime_error("parameter block " + name + " has the wrong length");
      }
      Eigen::Map<Eigen::MatrixXd> mat(b.data, b.rows, b.cols);
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < b.rows; ++r) {
        for (Eigen::Index c = 0; c < b.cols; ++c) mat(r, c) = values[k++];
      }
    }
    if (doc.contains("run")) out.run_json = doc["run"].dump();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace scssl

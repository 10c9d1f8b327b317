#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace scssl {

enum class Activation { relu, tanh };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// The three classification heads sharing one backbone.
enum class HeadId : int { original = 0, output = 1, expansive = 2 };
inline constexpr std::array<HeadId, 3> kAllHeads = {HeadId::original, HeadId::output,
                                                    HeadId::expansive};
std::string_view to_string(HeadId h);

struct NetworkShape {
  int input_dim = 16;
  std::vector<int> hidden = {64, 64};
  int feature_dim = 32;
  int num_classes = 10;
  Activation activation = Activation::relu;

  void validate() const;
  /// input, hidden..., feature.
  std::vector<int> widths() const;
  bool operator==(const NetworkShape&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

/// Affine classifier F(z) = W z + b.
struct Head {
  Eigen::MatrixXd weight;  // K x Q
  Eigen::VectorXd bias;    // K
};

/// Backbone layers plus three heads. The same type doubles as the gradient and
/// velocity container, so all three always share one layout.
struct Model {
  NetworkShape shape;
  std::vector<DenseLayer> backbone;
  std::array<Head, 3> heads;

  Head& head(HeadId h) { return heads[static_cast<std::size_t>(h)]; }
  const Head& head(HeadId h) const { return heads[static_cast<std::size_t>(h)]; }

  /// All parameters zero.
  static Model zeros(const NetworkShape& shape);
  /// Uniform He fan-in init, U(-sqrt(6/fan_in), sqrt(6/fan_in)), for every
  /// weight matrix; all biases start at zero.
  static Model initialize(const NetworkShape& shape, std::uint64_t seed);

  std::size_t parameter_count() const;
  bool all_finite() const;
};

using Gradients = Model;

/// Calls f(name, span) for every parameter block in a fixed order:
/// backbone.{i}.weight, backbone.{i}.bias, then head.{original,output,expansive}.{weight,bias}.
/// Spans view Eigen's column-major storage.
template <typename M, typename F>
void for_each_parameter(M& model, F&& f) {
  using Elem = std::conditional_t<std::is_const_v<M>, const double, double>;
  for (std::size_t i = 0; i < model.backbone.size(); ++i) {
    auto& layer = model.backbone[i];
    const std::string prefix = "backbone." + std::to_string(i);
    f(prefix + ".weight", std::span<Elem>(layer.weight.data(), layer.weight.size()));
    f(prefix + ".bias", std::span<Elem>(layer.bias.data(), layer.bias.size()));
  }
  for (HeadId h : kAllHeads) {
    auto& head = model.heads[static_cast<std::size_t>(h)];
    const std::string prefix = "head." + std::string(to_string(h));
    f(prefix + ".weight", std::span<Elem>(head.weight.data(), head.weight.size()));
    f(prefix + ".bias", std::span<Elem>(head.bias.data(), head.bias.size()));
  }
}

/// Cached activations of one batch forward pass. Column j is sample j.
struct ForwardPass {
  /// activations[0] is the input; activations[i] the output of layer i.
  std::vector<Eigen::MatrixXd> activations;
  std::array<Eigen::MatrixXd, 3> logits;

  const Eigen::MatrixXd& features() const { return activations.back(); }
  const Eigen::MatrixXd& head_logits(HeadId h) const {
    return logits[static_cast<std::size_t>(h)];
  }
};

ForwardPass forward(const Model& model, const Eigen::MatrixXd& x);
Eigen::MatrixXd forward_features(const Model& model, const Eigen::MatrixXd& x);
Eigen::VectorXd forward_features(const Model& model, const Eigen::VectorXd& x);

Eigen::MatrixXd head_logits(const Head& head, const Eigen::MatrixXd& features);
Eigen::VectorXd head_logits(const Head& head, const Eigen::VectorXd& features);

/// Column-wise softmax with max subtraction.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Index of the largest entry; ties resolve to the lowest index.
int argmax(const Eigen::Ref<const Eigen::VectorXd>& v);
int predict(const Model& model, HeadId head, const Eigen::VectorXd& x);

/// Upstream gradients dLoss/dlogits per head for one ForwardPass; a null
/// entry means that head does not contribute.
using HeadLogitGradients = std::array<const Eigen::MatrixXd*, 3>;

/// Reverse-mode pass. Adds parameter gradients into `grads`; the backbone
/// receives the sum of all contributing heads.
void backward(const Model& model, const ForwardPass& pass, const HeadLogitGradients& upstream,
              Gradients& grads);

struct OptimizerConfig {
  double learning_rate = 0.03;
  double momentum = 0.9;
  double weight_decay = 0.0005;

  void validate() const;
};

/// SGD with heavy-ball momentum and L2 decay on every parameter:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
void sgd_step(std::span<double> params, std::span<const double> grads,
              std::span<double> velocity, const OptimizerConfig& cfg);

class SgdOptimizer {
 public:
  SgdOptimizer(const NetworkShape& shape, OptimizerConfig cfg);

  void step(Model& model, const Gradients& grads);
  const OptimizerConfig& config() const noexcept { return cfg_; }
  const Model& velocity() const noexcept { return velocity_; }

 private:
  OptimizerConfig cfg_;
  Model velocity_;
};

/// Checkpoint document, field order:
///   format, version, config_hash, shape{input_dim, hidden, feature_dim,
///   num_classes, activation}, parameters[{name, rows, cols, values}]
/// with values in row-major order. `extra` is stored under "run" when given.
void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     std::string_view config_hash, std::string_view extra_json = {});

struct LoadedCheckpoint {
  Model model;
  std::string config_hash;
  std::string run_json;  // empty when absent
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace scssl

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "scssl/network.hpp"
#include "scssl/random.hpp"

namespace scssl::testing {

/// Small smooth model for finite-difference checks.
inline Model small_model(std::uint64_t seed, int d = 4, int h = 8, int q = 4, int k = 3) {
  NetworkShape shape;
  shape.input_dim = d;
  shape.hidden = {h};
  shape.feature_dim = q;
  shape.num_classes = k;
  shape.activation = Activation::tanh;
  Model m = Model::initialize(shape, seed);
  // Non-zero biases so their gradients are exercised too.
  Rng rng(derive_seed(seed, {99}));
  for (auto& layer : m.backbone) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = 0.2 * rng.normal();
  }
  for (auto& head : m.heads) {
    for (Eigen::Index i = 0; i < head.bias.size(); ++i) head.bias[i] = 0.5 * rng.normal();
  }
  return m;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                                     double scale = 1.0) {
  Rng rng(seed);
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) x(i, j) = scale * rng.normal();
  }
  return x;
}

/// Largest relative error between `analytic` and central differences of `f`
/// over every parameter. The denominator is floored so exact zeros compare
/// as absolute errors.
template <typename F>
double max_gradient_error(const Model& model, const Gradients& analytic, F&& f,
                          double h = 1e-5) {
  Model probe = model;
  std::vector<std::span<double>> params;
  std::vector<std::span<const double>> grads;
  for_each_parameter(probe, [&](const std::string&, std::span<double> s) { params.push_back(s); });
  for_each_parameter(analytic,
                     [&](const std::string&, std::span<const double> s) { grads.push_back(s); });
  double worst = 0.0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double saved = params[b][i];
      params[b][i] = saved + h;
      const double up = f(probe);
      params[b][i] = saved - h;
      const double down = f(probe);
      params[b][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grads[b][i];
      const double denom = std::max(std::abs(a) + std::abs(numeric), 1e-6);
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

/// Fresh directory under the build tree for a test.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* root = std::getenv("SCSSL_OUTPUT_ROOT");
  std::filesystem::path dir =
      std::filesystem::path(root && *root ? root : "test_runs") / "scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace scssl::testing

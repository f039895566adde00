// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace zsmil {

enum class OptimizerKind { GradientDescent, Adam };

const char* optimizer_name(OptimizerKind kind) noexcept;  // "sgd" / "adam"
std::optional<OptimizerKind> parse_optimizer(std::string_view s) noexcept;

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Updates a fixed list of parameter buffers in place. The list (count and
/// sizes) must be the same on every call; moment state is kept per element.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads);

  std::size_t steps_taken() const noexcept { return t_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace zsmil

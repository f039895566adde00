// SPDX-License-Identifier: Apache-2.0
#include "optimizer.hpp"

#include <cmath>

#include "error.hpp"

namespace zsmil {

const char* optimizer_name(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

std::optional<OptimizerKind> parse_optimizer(std::string_view s) noexcept {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd" || s == "gd") return OptimizerKind::GradientDescent;
  return std::nullopt;
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be > 0");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "betas must be in [0, 1)");
  }
  if (!(config_.epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be > 0");
}

void Optimizer::step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) throw Error(ErrorCode::ShapeMismatch, "param/grad list lengths differ");
  ++t_;
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::GradientDescent) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].size() != grads[i].size()) throw Error(ErrorCode::ShapeMismatch, "param/grad size");
      for (std::size_t j = 0; j < params[i].size(); ++j) params[i][j] -= lr * grads[i][j];
    }
    return;
  }

  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "parameter list changed between steps");
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || m_[i].size() != params[i].size()) {
      throw Error(ErrorCode::ShapeMismatch, "param/grad size");
    }
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double g = grads[i][j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      params[i][j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.epsilon);
    }
  }
}

}  // namespace zsmil

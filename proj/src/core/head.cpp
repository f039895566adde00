// SPDX-License-Identifier: Apache-2.0
#include "head.hpp"

#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace zsmil {

const char* init_name(InitKind kind) noexcept {
  switch (kind) {
    case InitKind::ZeroShot: return "zeroshot";
    case InitKind::KaimingUniform: return "kaiming-uniform";
    case InitKind::KaimingNormal: return "kaiming-normal";
    case InitKind::XavierUniform: return "xavier-uniform";
    case InitKind::XavierNormal: return "xavier-normal";
  }
  return "?";
}

const char* init_label(InitKind kind) noexcept {
  switch (kind) {
    case InitKind::ZeroShot: return "ZS-MIL";
    case InitKind::KaimingUniform: return "Kaiming uniform";
    case InitKind::KaimingNormal: return "Kaiming normal";
    case InitKind::XavierUniform: return "Xavier uniform";
    case InitKind::XavierNormal: return "Xavier normal";
  }
  return "?";
}

std::optional<InitKind> parse_init(std::string_view s) noexcept {
  for (auto k : {InitKind::ZeroShot, InitKind::KaimingUniform, InitKind::KaimingNormal, InitKind::XavierUniform,
                 InitKind::XavierNormal}) {
    if (s == init_name(k)) return k;
  }
  return std::nullopt;
}

HeadParams init_head(const InitStrategy& strategy, std::size_t S, std::size_t d, double tau, bool learn_tau) {
  if (S < 2) throw Error(ErrorCode::InvalidArgument, "head needs at least 2 classes");
  if (d < 1) throw Error(ErrorCode::InvalidArgument, "head dim must be >= 1");
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");
  HeadParams p;
  p.tau = tau;
  p.learn_tau = learn_tau;
  p.W = Matrix(S, d);

  Rng rng(strategy.seed);
  const double fan_in = static_cast<double>(d);
  const double fan_sum = static_cast<double>(d + S);
  switch (strategy.kind) {
    case InitKind::ZeroShot: {
      const PrototypeSet* protos = strategy.prototypes;
      if (!protos) throw Error(ErrorCode::InvalidArgument, "zero-shot init needs prototypes");
      if (protos->num_classes() != S || protos->dim() != d) {
        throw Error(ErrorCode::DimMismatch, "prototypes are " + std::to_string(protos->num_classes()) + "x" +
                                                std::to_string(protos->dim()) + ", head is " +
                                                std::to_string(S) + "x" + std::to_string(d));
      }
      p.W = protos->weights;
      break;
    }
    case InitKind::KaimingUniform: {
      const double b = std::sqrt(6.0 / fan_in);
      for (double& v : p.W.data()) v = rng.uniform(-b, b);
      break;
    }
    case InitKind::KaimingNormal: {
      const double sd = std::sqrt(2.0 / fan_in);
      for (double& v : p.W.data()) v = rng.normal(0.0, sd);
      break;
    }
    case InitKind::XavierUniform: {
      const double b = std::sqrt(6.0 / fan_sum);
      for (double& v : p.W.data()) v = rng.uniform(-b, b);
      break;
    }
    case InitKind::XavierNormal: {
      const double sd = std::sqrt(2.0 / fan_sum);
      for (double& v : p.W.data()) v = rng.normal(0.0, sd);
      break;
    }
  }
  return p;
}

HeadCache head_forward(const HeadParams& params, std::span<const double> z) {
  const std::size_t S = params.num_classes();
  const std::size_t d = params.dim();
  if (z.size() != d) throw Error(ErrorCode::ShapeMismatch, "Z length " + std::to_string(z.size()));
  if (std::abs(norm2(z) - 1.0) > 1e-6) throw Error(ErrorCode::InvalidArgument, "Z must be unit norm");
  if (!(params.tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");

  HeadCache c;
  c.generation = params.generation;
  c.z.assign(z.begin(), z.end());
  c.unit_w = Matrix(S, d);
  c.row_norms.resize(S);
  c.cosines.resize(S);
  c.logits.resize(S);
  for (std::size_t k = 0; k < S; ++k) {
    c.row_norms[k] = norm2(params.W.row(k));
    const Vector u = l2_normalize(params.W.row(k));
    std::copy(u.begin(), u.end(), c.unit_w.row(k).begin());
    c.cosines[k] = dot(z, u);
    c.logits[k] = c.cosines[k] / params.tau;
  }
  c.probs = softmax(c.logits);
  return c;
}

double head_loss(const HeadCache& cache, std::size_t target) {
  if (target >= cache.probs.size()) throw Error(ErrorCode::LabelOutOfRange, "target class");
  return -stable_log(cache.probs[target]) / static_cast<double>(cache.probs.size());
}

HeadGrad head_backward(const HeadParams& params, const HeadCache& c, std::size_t target) {
  const std::size_t S = params.num_classes();
  const std::size_t d = params.dim();
  if (c.generation != params.generation || c.probs.size() != S || c.z.size() != d) {
    throw Error(ErrorCode::StaleCache, "head cache does not match parameters");
  }
  if (target >= S) throw Error(ErrorCode::LabelOutOfRange, "target class");

  HeadGrad g{Matrix(S, d), std::nullopt, Vector(d, 0.0)};
  // Inside the log clamp the loss is flat.
  if (c.probs[target] < kLogClamp) {
    if (params.learn_tau) g.tau = 0.0;
    return g;
  }
  const double inv_s = 1.0 / static_cast<double>(S);
  double g_tau = 0.0;
  for (std::size_t k = 0; k < S; ++k) {
    const double g_logit = inv_s * (c.probs[k] - (k == target ? 1.0 : 0.0));
    const double g_cos = g_logit / params.tau;
    g_tau -= g_logit * c.logits[k] / params.tau;
    const auto u = c.unit_w.row(k);
    for (std::size_t j = 0; j < d; ++j) g.z[j] += g_cos * u[j];
    // d cos / d W_k = (I - u u^T) z / ||W_k||
    const double uz = dot(u, c.z);
    auto gw = g.W.row(k);
    for (std::size_t j = 0; j < d; ++j) gw[j] = g_cos * (c.z[j] - u[j] * uz) / c.row_norms[k];
  }
  if (params.learn_tau) g.tau = g_tau;
  return g;
}

}  // namespace zsmil

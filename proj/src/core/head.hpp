// SPDX-License-Identifier: Apache-2.0
#pragma once

// Temperature-scaled cosine classifier:
//   logits_c = <Z, W_c / ||W_c||> / tau,  probs = softmax(logits)
// trained with the per-bag loss  L = -(1/S) sum_s Y_s log(p_s),  which for a
// one-hot label is -(1/S) log p_target.

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "linalg.hpp"
#include "prototypes.hpp"

namespace zsmil {

enum class InitKind { ZeroShot, KaimingUniform, KaimingNormal, XavierUniform, XavierNormal };

const char* init_name(InitKind kind) noexcept;  // "zeroshot", "kaiming-uniform", ...
const char* init_label(InitKind kind) noexcept; // "ZS-MIL", "Kaiming uniform", ...
std::optional<InitKind> parse_init(std::string_view s) noexcept;

struct InitStrategy {
  InitKind kind = InitKind::ZeroShot;
  const PrototypeSet* prototypes = nullptr;  // required for ZeroShot
  std::uint64_t seed = 0;                    // used by the random kinds
};

struct HeadParams {
  Matrix W;  // S x d
  double tau = kDefaultTemperature;
  bool learn_tau = false;
  std::uint64_t generation = 0;

  std::size_t num_classes() const noexcept { return W.rows(); }
  std::size_t dim() const noexcept { return W.cols(); }
};

/// fan_in = d, fan_out = S. Kaiming uses the rectifier gain sqrt(2):
///   kaiming-uniform U(-sqrt(6/d), sqrt(6/d)),  kaiming-normal N(0, 2/d),
///   xavier-uniform  U(-sqrt(6/(d+S)), ...),     xavier-normal  N(0, 2/(d+S)).
/// Throws DimMismatch when zero-shot prototypes are not S x d.
HeadParams init_head(const InitStrategy& strategy, std::size_t n_classes, std::size_t dim,
                     double tau = kDefaultTemperature, bool learn_tau = false);

struct HeadCache {
  std::uint64_t generation = 0;
  Vector z;
  Matrix unit_w;     // rows of W normalized
  Vector row_norms;
  Vector cosines;
  Vector logits;
  Vector probs;
};

/// Requires ||z|| = 1 within 1e-6 (InvalidArgument otherwise); ZeroNorm if a
/// weight row degenerates.
HeadCache head_forward(const HeadParams& params, std::span<const double> z);

struct HeadGrad {
  Matrix W;
  std::optional<double> tau;  // present when learn_tau
  Vector z;
};

/// The loss for one bag, with the log clamp.
double head_loss(const HeadCache& cache, std::size_t target);

/// Gradient of head_loss. StaleCache if the cache came from other parameters.
HeadGrad head_backward(const HeadParams& params, const HeadCache& cache, std::size_t target);

}  // namespace zsmil

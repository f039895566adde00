// SPDX-License-Identifier: Apache-2.0
#pragma once

// Slide-level aggregation: maps an N x d bag of patch embeddings to one unit
// vector Z. Every kind finishes with an l2 normalization so that the head's
// dot product is a cosine similarity.
//
//   BGAP   Z = normalize(mean_n x_n)
//   BGMP   Z = normalize(max_n x_n)               (coordinate-wise)
//   ABMIL  e_n = w . (tanh(V x_n) * sigmoid(U x_n)),  a = softmax(e),
//          Z = normalize(sum_n a_n x_n)
//   SIMPLE_TRANSFORMER
//          one pre-norm single-head attention block. A learned class token
//          attends over the layer-normed instances:
//            q = LN(cls) Wq, k_n = LN(x_n) Wk, v_n = LN(x_n) Wv
//            a = softmax(q . k_n / sqrt(d_h)),  o = sum_n a_n v_n
//            Z = normalize(cls + o Wo)
//          This stands in for TransMIL; Nystrom attention and positional
//          encodings are not modelled.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>

#include "linalg.hpp"

namespace zsmil {

enum class AggregatorKind { BGAP, BGMP, ABMIL, SimpleTransformer };

const char* aggregator_name(AggregatorKind kind) noexcept;       // "BGAP", ..., "SIMPLE_TRANSFORMER"
const char* aggregator_flag(AggregatorKind kind) noexcept;       // "bgap", ..., "transformer"
std::optional<AggregatorKind> parse_aggregator(std::string_view s) noexcept;  // accepts either spelling

inline constexpr std::size_t kDefaultAttentionHidden = 128;
inline constexpr double kLayerNormEps = 1e-5;

struct AggregatorDims {
  std::size_t dim = 0;
  std::size_t attention_hidden = kDefaultAttentionHidden;  // ABMIL D_a
  std::size_t head_dim = 0;                                // transformer d_h; 0 means dim
  std::size_t effective_head_dim() const noexcept { return head_dim == 0 ? dim : head_dim; }
};

struct AbmilParams {
  Matrix V;  // D_a x d
  Matrix U;  // D_a x d
  Vector w;  // D_a
};

struct TransformerParams {
  Matrix Wq, Wk, Wv;  // d x d_h
  Matrix Wo;          // d_h x d
  Vector cls;         // d
  Vector ln_gamma;    // d
  Vector ln_beta;     // d
};

/// Parameters (or, with the same layout, gradients) of one aggregator.
struct AggregatorParams {
  AggregatorKind kind = AggregatorKind::BGAP;
  AggregatorDims dims;
  std::variant<std::monostate, AbmilParams, TransformerParams> values;
  /// Bumped by every parameter update; forward records remember it.
  std::uint64_t generation = 0;

  const AbmilParams& abmil() const { return std::get<AbmilParams>(values); }
  AbmilParams& abmil() { return std::get<AbmilParams>(values); }
  const TransformerParams& transformer() const { return std::get<TransformerParams>(values); }
  TransformerParams& transformer() { return std::get<TransformerParams>(values); }
};

struct TensorView {
  std::string_view name;
  std::span<double> data;
  std::size_t rows;
  std::size_t cols;
};

struct ConstTensorView {
  std::string_view name;
  std::span<const double> data;
  std::size_t rows;
  std::size_t cols;
};

/// Every trainable tensor in a fixed order (used by optimizers and serialization).
std::vector<TensorView> tensors(AggregatorParams& p);
std::vector<ConstTensorView> tensors(const AggregatorParams& p);

/// Zero-filled parameters of the right shapes.
AggregatorParams zero_params(AggregatorKind kind, const AggregatorDims& dims);

/// Xavier-uniform projection matrices, zero vectors and shifts, unit layer-norm scales.
AggregatorParams init_aggregator(AggregatorKind kind, const AggregatorDims& dims, std::uint64_t seed);

/// Number of trainable scalars.
std::size_t param_count(AggregatorKind kind, const AggregatorDims& dims);

struct BagForwardRecord {
  AggregatorKind kind = AggregatorKind::BGAP;
  std::uint64_t generation = 0;
  std::size_t n = 0;
  std::size_t d = 0;
  Vector pooled;  // value fed to the final l2 normalization
  Vector z;
  std::vector<std::size_t> argmax_rows;  // BGMP, per coordinate
  Vector attention;                      // ABMIL / transformer
  // ABMIL
  Matrix tanh_act;     // N x D_a
  Matrix sigmoid_act;  // N x D_a
  // transformer
  Matrix ln_hat;        // N x d, normalized before scale/shift
  Vector ln_inv_std;    // N
  Matrix ln_out;        // N x d
  Vector cls_hat;
  double cls_inv_std = 0.0;
  Vector cls_ln;
  Vector query;
  Matrix keys;    // N x d_h
  Matrix values;  // N x d_h
  Vector context; // d_h
};

struct ForwardResult {
  Vector z;
  std::optional<Vector> attention;
  BagForwardRecord record;
};

/// Throws EmptyBag, ShapeMismatch, or ZeroNorm if the pooled vector vanishes.
ForwardResult aggregator_forward(const AggregatorParams& params, const Matrix& bag);

struct AggregatorGrad {
  AggregatorParams params;  // same layout as the forward parameters
  Matrix bag;               // N x d, empty unless requested
};

/// Exact vector-Jacobian product of aggregator_forward. record must come from
/// aggregator_forward(params, bag) with the same parameter generation;
/// otherwise StaleRecord. BGMP routes each coordinate's gradient to the
/// lowest-index maximal row.
AggregatorGrad aggregator_backward(const AggregatorParams& params, const BagForwardRecord& record,
                                   const Matrix& bag, std::span<const double> grad_z,
                                   bool want_bag_grad = true);

}  // namespace zsmil

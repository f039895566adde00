// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "data_io.hpp"
#include "metrics.hpp"
#include "prototypes.hpp"

namespace zsmil {

/// Patch rows whose norm is further than this from 1 are counted as warnings.
inline constexpr double kUnitNormTolerance = 1e-4;

/// Mean over patches of the cosine similarity to each prototype. Every patch
/// is normalized before scoring; renormalized (if given) is incremented once
/// per row that was not unit-norm within kUnitNormTolerance.
Vector zero_shot_scores(const Matrix& bag, const PrototypeSet& protos, std::size_t* renormalized = nullptr);

struct ZeroShotResult {
  std::vector<std::string> slide_ids;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> predictions;
  std::vector<Vector> scores;
  std::vector<double> per_class_recall;
  double balanced_accuracy = 0.0;
  std::size_t renormalized_rows = 0;
};

/// Argmax of zero_shot_scores per bag (ties to the lowest class index).
ZeroShotResult zero_shot_predict(const std::vector<const Bag*>& bags, const PrototypeSet& protos);
ZeroShotResult zero_shot_predict(const std::vector<Bag>& bags, const PrototypeSet& protos);

}  // namespace zsmil

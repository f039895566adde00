// SPDX-License-Identifier: Apache-2.0
#include "zeroshot.hpp"

#include <cmath>

#include "error.hpp"

namespace zsmil {

Vector zero_shot_scores(const Matrix& bag, const PrototypeSet& protos, std::size_t* renormalized) {
  if (bag.rows() == 0) throw Error(ErrorCode::EmptyBag, "bag has no patches");
  if (bag.cols() != protos.dim()) {
    throw Error(ErrorCode::DimMismatch, "bag dim " + std::to_string(bag.cols()) + " vs prototype dim " +
                                            std::to_string(protos.dim()));
  }
  const std::size_t S = protos.num_classes();
  Vector scores(S, 0.0);
  for (std::size_t n = 0; n < bag.rows(); ++n) {
    const double norm = norm2(bag.row(n));
    if (renormalized && std::abs(norm - 1.0) > kUnitNormTolerance) ++*renormalized;
    const Vector unit = l2_normalize(bag.row(n));
    for (std::size_t c = 0; c < S; ++c) scores[c] += dot(unit, protos.weights.row(c));
  }
  for (double& s : scores) s /= static_cast<double>(bag.rows());
  return scores;
}

ZeroShotResult zero_shot_predict(const std::vector<Bag>& bags, const PrototypeSet& protos) {
  std::vector<const Bag*> ptrs;
  for (const auto& b : bags) ptrs.push_back(&b);
  return zero_shot_predict(ptrs, protos);
}

ZeroShotResult zero_shot_predict(const std::vector<const Bag*>& bags, const PrototypeSet& protos) {
  if (bags.empty()) throw Error(ErrorCode::EmptyList, "split has no bags");
  ZeroShotResult r;
  ConfusionMatrix cm(protos.num_classes());
  for (const Bag* bag : bags) {
    Vector s = zero_shot_scores(bag->features, protos, &r.renormalized_rows);
    const std::size_t pred = argmax(s);
    cm.add(bag->entry.label, pred);
    r.slide_ids.push_back(bag->entry.slide_id);
    r.labels.push_back(bag->entry.label);
    r.predictions.push_back(pred);
    r.scores.push_back(std::move(s));
  }
  r.per_class_recall = per_class_recall(cm);
  r.balanced_accuracy = balanced_accuracy(cm);
  return r;
}

}  // namespace zsmil

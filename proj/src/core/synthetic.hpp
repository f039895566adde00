// SPDX-License-Identifier: Apache-2.0
#pragma once

// Desk-scale stand-in for a slide-embedding dataset. Each class c has a unit
// direction mu_c = normalize(u_shared + separation * u_c) with u_* independent
// random unit vectors, so the expected pairwise cosine is about
// 1 / (1 + separation^2). A bag mixes "evidence" patches drawn from
// N(separation * mu_c, sigma^2 I) with background patches from N(0, sigma^2 I);
// every patch is stored unit-norm. Prototypes are normalize(mu_c + noise * g)
// to emulate imperfect text prototypes.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "data_io.hpp"
#include "prototypes.hpp"

namespace zsmil {

struct SyntheticSpec {
  std::size_t n_classes = 2;
  std::size_t dim = 64;
  std::vector<std::size_t> train_pool_per_class{60, 39};
  std::vector<std::size_t> val_per_class{15, 10};
  std::vector<std::size_t> test_per_class{15, 10};
  std::size_t min_patches = 48;
  std::size_t max_patches = 144;
  double evidence_fraction = 0.3;
  double class_separation = 1.0;
  double noise_sigma = 1.0;
  double prototype_noise = 0.3;
  std::uint64_t seed = 0;
};

/// Per-class counts following the 445:291 template for two classes (the
/// second class is scaled down); uniform counts otherwise.
std::vector<std::size_t> imbalanced_counts(std::size_t majority, std::size_t n_classes);

/// Throws InvalidSpec.
void validate(const SyntheticSpec& spec);

nlohmann::ordered_json to_json(const SyntheticSpec& spec);
/// Missing keys keep their defaults; per-class counts may be given either as
/// arrays or as a single majority count (expanded with imbalanced_counts).
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct SyntheticDataset {
  std::vector<Bag> bags;  // entry.path is relative ("bags/<slide_id>.zsml")
  PrototypeSet prototypes;
  Matrix class_directions;  // S x d, unit rows
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Writes manifest.jsonl, bags/*.zsml, prototypes.{zsml,json} and
/// synthetic_spec.json under out_dir. Bag features are the float32-rounded
/// values that were written.
SyntheticDataset write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace zsmil

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "data_io.hpp"
#include "prototypes.hpp"
#include "report.hpp"
#include "model_io.hpp"
#include "trainer.hpp"

namespace zsmil {

struct Arm {
  std::string label;
  AggregatorKind aggregator = AggregatorKind::ABMIL;
  InitKind init = InitKind::ZeroShot;
};

/// Kaiming/Xavier (uniform and normal) and zero-shot heads on ABMIL.
std::vector<Arm> init_ablation_arms();
/// Zero-shot heads on BGMP, BGAP, ABMIL and the simple transformer.
std::vector<Arm> aggregator_ablation_arms();

struct ProtocolConfig {
  std::string title;
  std::vector<Arm> arms;
  std::vector<std::size_t> k_values{4, 16};
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  /// Aggregator, init and seeds are overridden per arm and episode.
  TrainConfig train;
  /// Worker threads; results do not depend on it.
  std::size_t jobs = 1;
  /// When set, every trained model is saved as <dir>/<arm>_k<k>_r<repeat>.
  std::optional<std::filesystem::path> model_dir;
  /// Extra provenance merged into the report's config echo.
  nlohmann::ordered_json provenance;
};

nlohmann::ordered_json to_json(const ProtocolConfig& config);

/// For every (arm, k, repeat): sample an episode, train, and score the test
/// split. Episodes and aggregator/head seeds depend only on (seed, k, repeat),
/// so every arm sees the same support sets and aggregator initialization.
RunReport run_protocol(const Manifest& manifest, const PrototypeSet& protos, const ProtocolConfig& config);

/// File-name friendly arm label.
std::string arm_slug(const Arm& arm);

}  // namespace zsmil

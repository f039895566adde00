// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "metrics.hpp"

namespace zsmil {

inline constexpr int kReportSchemaVersion = 1;

struct CellResult {
  std::size_t k = 0;
  std::vector<double> values;  // test balanced accuracy per repeat
  Summary summary;
};

struct ArmResult {
  std::string label;
  std::string aggregator;
  std::string init;
  std::size_t param_count = 0;  // aggregator parameters (the head adds S x d)
  std::vector<CellResult> cells;
};

struct EpisodeRecord {
  std::string arm;
  std::size_t k = 0;
  std::size_t repeat = 0;
  std::uint64_t episode_seed = 0;
  std::vector<std::string> support;
  double test_balanced_accuracy = 0.0;
  std::vector<double> per_class_recall;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::size_t epochs_run = 0;
};

struct ZeroShotRow {
  std::string label = "Zero-Shot (MI-Zero)";
  double balanced_accuracy = 0.0;
  std::vector<double> per_class_recall;
  std::size_t n_bags = 0;
};

struct RunReport {
  std::string title;
  nlohmann::ordered_json config;
  std::vector<std::string> class_names;
  std::vector<std::size_t> k_values;
  std::size_t repeats = 0;
  ZeroShotRow zero_shot;
  std::vector<ArmResult> arms;
  std::vector<EpisodeRecord> episodes;
};

nlohmann::ordered_json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

/// Table with one row per arm and one column per k; cells are "mean±std" in
/// percent with two decimals. Single-repeat cells are marked with '*'.
std::string render_text(const RunReport& report);

/// Formats a [0,1] value the way render_text prints it ("83.90").
std::string format_percent(double value);

}  // namespace zsmil

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aggregators.hpp"
#include "data_io.hpp"
#include "head.hpp"
#include "metrics.hpp"
#include "optimizer.hpp"
#include "prototypes.hpp"

namespace zsmil {

inline constexpr double kMinTemperature = 1e-3;

struct EpisodeSpec {
  std::size_t k_shots = 4;
  std::size_t repeat_index = 0;
  std::uint64_t base_seed = 0;
  /// Only used when the manifest has no val split: this fraction of each
  /// class's train pool is held out, identically for every repeat.
  double val_fraction = 0.2;
};

struct EpisodeSelection {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> support;  // sorted by slide_id
  std::vector<ManifestEntry> val;
};

/// Samples k bags per class uniformly without replacement from the train
/// pool, seeded by mix_seed(base_seed, repeat_index). Throws InsufficientBags.
EpisodeSelection sample_episode(const Manifest& manifest, std::size_t n_classes, const EpisodeSpec& spec);

struct TrainConfig {
  AggregatorKind aggregator = AggregatorKind::ABMIL;
  std::size_t attention_hidden = kDefaultAttentionHidden;
  std::size_t head_dim = 0;  // transformer d_h, 0 = embedding dim
  InitKind init = InitKind::ZeroShot;
  OptimizerConfig optimizer;
  std::size_t epochs = 100;
  std::size_t patience = 20;
  double tau = kDefaultTemperature;
  bool learn_tau = false;
  bool freeze_head = false;
  /// Seeds the aggregator initialization.
  std::uint64_t aggregator_seed = 0;
  /// Seeds the random head initializations.
  std::uint64_t head_seed = 0;
};

void validate(const TrainConfig& config);
nlohmann::ordered_json to_json(const TrainConfig& config);
/// Overlays keys present in j onto base. Throws InvalidArgument.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct TrainedModel {
  AggregatorParams aggregator;
  HeadParams head;
  std::vector<std::string> class_names;
  std::vector<double> train_loss;       // mean loss over the support set, per epoch, before that epoch's step
  std::vector<double> val_metric;       // val balanced accuracy after each epoch's step
  std::size_t best_epoch = 0;           // index into the traces
  double best_val = 0.0;
  TrainConfig config;
  std::uint64_t episode_seed = 0;
};

/// Full-batch training on the support bags (in the given order). After each
/// epoch's optimizer step the val split is scored; the parameters of the
/// first best-scoring epoch are kept, and training stops once `patience`
/// epochs pass without improvement. With an empty val set the last epoch is
/// kept. Throws NonFiniteLoss naming the offending bag.
TrainedModel train(const std::vector<const Bag*>& support, const std::vector<const Bag*>& val,
                   const PrototypeSet& protos, const TrainConfig& config);

struct Prediction {
  std::size_t label = 0;
  std::size_t predicted = 0;
  Vector probs;
  std::optional<Vector> attention;
};

struct Evaluation {
  std::vector<Prediction> predictions;
  std::vector<double> per_class_recall;
  double balanced_accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Argmax prediction for every bag (ties to the lowest class index).
Evaluation evaluate(const TrainedModel& model, const std::vector<const Bag*>& bags,
                    bool keep_attention = false);

/// Attention-style weights for one bag. ABMIL and the transformer report their
/// attention row; BGAP reports uniform weights; BGMP reports, per patch, the
/// fraction of coordinates for which it is the (first) maximum.
AttentionExport attention_for_bag(const TrainedModel& model, const Bag& bag);

}  // namespace zsmil

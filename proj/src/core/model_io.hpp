// SPDX-License-Identifier: Apache-2.0
#pragma once

// A trained model is stored as a pair:
//   <base>.zsmodel  embedding-file blocks back to back: every aggregator
//                   tensor in tensors() order, then the head weights (S x d),
//                   then tau as a 1 x 1 block
//   <base>.json     index: block names/shapes/byte offsets, dims, class
//                   names, training traces and the config echo
// Parameters are stored as float32, like every other embedding block.

#include <filesystem>

#include "trainer.hpp"

namespace zsmil {

void save_model(const TrainedModel& model, const std::filesystem::path& base);
TrainedModel load_model(const std::filesystem::path& base);

/// Strips a trailing ".zsmodel" or ".json".
std::filesystem::path model_base(const std::filesystem::path& path);

}  // namespace zsmil

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "linalg.hpp"

namespace zsmil {

inline constexpr double kDefaultTemperature = 0.07;

/// Unit-norm class prototypes, one row per class, in class-index order.
struct PrototypeSet {
  std::vector<std::string> class_names;
  Matrix weights;
  double temperature_default = kDefaultTemperature;

  std::size_t num_classes() const noexcept { return weights.rows(); }
  std::size_t dim() const noexcept { return weights.cols(); }
};

/// Prompt-template embeddings of one class: one row per template.
struct TemplateEmbeddings {
  std::string class_name;
  Matrix vectors;
};

/// Prompt ensembling: each template row is unit-normalized, the rows are
/// averaged, and the mean is normalized again. Throws DimMismatch,
/// DuplicateClass, EmptyTemplates, or EnsembleDegenerate (mean norm <= 1e-12).
PrototypeSet ensemble(const std::vector<TemplateEmbeddings>& per_class,
                      double temperature = kDefaultTemperature);

/// Checks the PrototypeSet invariants (S >= 2, unit rows, unique names).
void validate(const PrototypeSet& protos);

/// Strips a trailing ".zsml" or ".json" so either file of the pair can be named.
std::filesystem::path pair_base(const std::filesystem::path& path);

/// Writes <base>.zsml (matrix) and <base>.json ({class_names, temperature_default}).
void save_prototypes(const PrototypeSet& protos, const std::filesystem::path& base);
/// Rows are renormalized after load to undo float32 quantization of the norm.
PrototypeSet load_prototypes(const std::filesystem::path& base);

/// Template files are the hand-off format of the feature exporter:
/// <base>.zsml holds every template row stacked class by class, and
/// <base>.json is {"schema_version":1,"kind":"templates",
///                 "classes":[{"name":...,"rows":T},...]}.
std::vector<TemplateEmbeddings> load_templates(const std::filesystem::path& base);
void save_templates(const std::vector<TemplateEmbeddings>& per_class, const std::filesystem::path& base);

}  // namespace zsmil

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace zsmil {

/// counts(true, predicted).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes)
      : n_(n_classes), counts_(n_classes * n_classes, 0) {}

  static ConfusionMatrix from_predictions(std::size_t n_classes, const std::vector<std::size_t>& truth,
                                          const std::vector<std::size_t>& predicted);

  void add(std::size_t truth, std::size_t predicted, std::uint64_t count = 1);

  std::size_t num_classes() const noexcept { return n_; }
  std::uint64_t operator()(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
  std::uint64_t row_total(std::size_t truth) const;
  std::uint64_t total() const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

/// Recall of every class. Throws EmptyClass if some class has no true samples.
std::vector<double> per_class_recall(const ConfusionMatrix& cm);

/// Mean per-class recall. Throws EmptyClass.
double balanced_accuracy(const ConfusionMatrix& cm);

struct Summary {
  double mean = 0.0;
  double std = 0.0;     // sample standard deviation (n - 1)
  std::size_t n = 0;
  bool single_run = false;  // n == 1, std reported as 0 by convention
};

/// Throws EmptyList.
Summary summarize(const std::vector<double>& values);

struct AttentionExport {
  std::string slide_id;
  std::string aggregator;
  std::vector<double> weights;  // one per patch, nonnegative, sums to 1
  std::string note;
};

/// Writes <base>.csv (patch_index,attention_weight) and <base>.json.
void write_attention(const AttentionExport& exp, const std::filesystem::path& base);
/// Parses the CSV written by write_attention.
std::vector<double> read_attention_csv(const std::filesystem::path& csv_path);

}  // namespace zsmil

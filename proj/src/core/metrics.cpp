// SPDX-License-Identifier: Apache-2.0
#include "metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "error.hpp"

namespace zsmil {

ConfusionMatrix ConfusionMatrix::from_predictions(std::size_t n_classes, const std::vector<std::size_t>& truth,
                                                  const std::vector<std::size_t>& predicted) {
  if (truth.size() != predicted.size()) throw Error(ErrorCode::ShapeMismatch, "truth/prediction lengths differ");
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t count) {
  if (truth >= n_ || predicted >= n_) throw Error(ErrorCode::LabelOutOfRange, "class index out of range");
  counts_[truth * n_ + predicted] += count;
}

std::uint64_t ConfusionMatrix::row_total(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += (*this)(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::vector<double> per_class_recall(const ConfusionMatrix& cm) {
  std::vector<double> recall(cm.num_classes());
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const auto row = cm.row_total(c);
    if (row == 0) throw Error(ErrorCode::EmptyClass, "class " + std::to_string(c) + " has no true samples");
    recall[c] = static_cast<double>(cm(c, c)) / static_cast<double>(row);
  }
  return recall;
}

double balanced_accuracy(const ConfusionMatrix& cm) {
  const auto recall = per_class_recall(cm);
  double s = 0.0;
  for (double r : recall) s += r;
  return s / static_cast<double>(recall.size());
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorCode::EmptyList, "cannot summarize an empty list");
  Summary s;
  s.n = values.size();
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  if (s.n == 1) {
    s.single_run = true;
    return s;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  return s;
}

void write_attention(const AttentionExport& exp, const std::filesystem::path& base) {
  auto csv_path = base;
  csv_path += ".csv";
  auto json_path = base;
  json_path += ".json";

  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw Error(ErrorCode::IoError, "cannot create " + csv_path.string());
  csv << "patch_index,attention_weight\n";
  char buf[64];
  for (std::size_t i = 0; i < exp.weights.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, exp.weights[i]);
    csv << buf;
  }
  if (!csv) throw Error(ErrorCode::IoError, "write failed: " + csv_path.string());

  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["slide_id"] = exp.slide_id;
  j["aggregator"] = exp.aggregator;
  j["n_patches"] = exp.weights.size();
  j["weight_sum"] = std::accumulate(exp.weights.begin(), exp.weights.end(), 0.0);
  j["note"] = exp.note;
  j["csv"] = csv_path.filename().string();
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw Error(ErrorCode::IoError, "cannot create " + json_path.string());
  js << j.dump(2) << '\n';
}

std::vector<double> read_attention_csv(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line) || line != "patch_index,attention_weight") {
    throw Error(ErrorCode::ParseError, csv_path.string() + ": bad header");
  }
  std::vector<double> weights;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorCode::ParseError, csv_path.string() + ": " + line);
    const auto index = std::stoull(line.substr(0, comma));
    if (index != weights.size()) throw Error(ErrorCode::ParseError, csv_path.string() + ": out-of-order index");
    weights.push_back(std::stod(line.substr(comma + 1)));
  }
  return weights;
}

}  // namespace zsmil

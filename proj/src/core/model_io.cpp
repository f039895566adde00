// SPDX-License-Identifier: Apache-2.0
#include "model_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "data_io.hpp"
#include "error.hpp"

namespace zsmil {
namespace {

std::filesystem::path with_ext(const std::filesystem::path& base, const char* ext) {
  auto p = base;
  p += ext;
  return p;
}

struct Block {
  std::string name;
  std::span<double> data;
  std::size_t rows;
  std::size_t cols;
};

}  // namespace

std::filesystem::path model_base(const std::filesystem::path& path) {
  const auto ext = path.extension();
  if (ext == ".zsmodel" || ext == ".json") {
    auto p = path;
    p.replace_extension();
    return p;
  }
  return path;
}

void save_model(const TrainedModel& model, const std::filesystem::path& base) {
  std::ostringstream blob;
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  auto emit = [&](std::string_view name, std::span<const double> data, std::size_t rows, std::size_t cols) {
    const auto offset = static_cast<std::size_t>(blob.tellp());
    write_embeddings(blob, Matrix(rows, cols, std::vector<double>(data.begin(), data.end())));
    blocks.push_back({{"name", name}, {"rows", rows}, {"cols", cols}, {"offset", offset}});
  };
  for (const auto& t : tensors(model.aggregator)) emit(t.name, t.data, t.rows, t.cols);
  emit("head.W", model.head.W.data(), model.head.W.rows(), model.head.W.cols());
  const double tau = model.head.tau;
  emit("head.tau", {&tau, 1}, 1, 1);

  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["format"] = "zsmil-model";
  j["aggregator"] = {{"kind", aggregator_name(model.aggregator.kind)},
                     {"dim", model.aggregator.dims.dim},
                     {"attention_hidden", model.aggregator.dims.attention_hidden},
                     {"head_dim", model.aggregator.dims.effective_head_dim()}};
  j["class_names"] = model.class_names;
  j["tau"] = model.head.tau;
  j["learn_tau"] = model.head.learn_tau;
  j["blocks"] = blocks;
  j["train_loss"] = model.train_loss;
  j["val_balanced_accuracy"] = model.val_metric;
  j["best_epoch"] = model.best_epoch;
  j["best_val"] = model.best_val;
  j["episode_seed"] = model.episode_seed;
  j["config"] = to_json(model.config);

  std::ofstream bin(with_ext(base, ".zsmodel"), std::ios::binary | std::ios::trunc);
  if (!bin) throw Error(ErrorCode::IoError, "cannot create " + with_ext(base, ".zsmodel").string());
  const std::string bytes = blob.str();
  bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  std::ofstream idx(with_ext(base, ".json"), std::ios::trunc);
  if (!idx) throw Error(ErrorCode::IoError, "cannot create " + with_ext(base, ".json").string());
  idx << j.dump(2) << '\n';
  if (!bin || !idx) throw Error(ErrorCode::IoError, "write failed: " + base.string());
}

TrainedModel load_model(const std::filesystem::path& base_in) {
  const auto base = model_base(base_in);
  std::ifstream idx(with_ext(base, ".json"));
  if (!idx) throw Error(ErrorCode::IoError, "cannot open " + with_ext(base, ".json").string());
  std::ifstream bin(with_ext(base, ".zsmodel"), std::ios::binary);
  if (!bin) throw Error(ErrorCode::IoError, "cannot open " + with_ext(base, ".zsmodel").string());

  TrainedModel model;
  try {
    const auto j = nlohmann::json::parse(idx);
    if (j.value("format", "") != "zsmil-model") throw Error(ErrorCode::ParseError, "not a zsmil model index");
    if (j.value("schema_version", 0) != 1) throw Error(ErrorCode::UnsupportedVersion, "model schema version");
    const auto& a = j.at("aggregator");
    const auto kind = parse_aggregator(a.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::ParseError, "unknown aggregator kind");
    AggregatorDims dims{a.at("dim").get<std::size_t>(), a.at("attention_hidden").get<std::size_t>(),
                        a.at("head_dim").get<std::size_t>()};
    model.aggregator = zero_params(*kind, dims);
    model.class_names = j.at("class_names").get<std::vector<std::string>>();
    model.head.W = Matrix(model.class_names.size(), dims.dim);
    model.head.learn_tau = j.value("learn_tau", false);
    model.train_loss = j.value("train_loss", std::vector<double>{});
    model.val_metric = j.value("val_balanced_accuracy", std::vector<double>{});
    model.best_epoch = j.value("best_epoch", std::size_t{0});
    model.best_val = j.value("best_val", 0.0);
    model.episode_seed = j.value("episode_seed", std::uint64_t{0});
    if (j.contains("config")) model.config = train_config_from_json(j.at("config"));

    std::vector<Block> expected;
    for (auto& t : tensors(model.aggregator)) expected.push_back({std::string(t.name), t.data, t.rows, t.cols});
    expected.push_back({"head.W", model.head.W.data(), model.head.W.rows(), model.head.W.cols()});
    double tau = 0.0;
    expected.push_back({"head.tau", {&tau, 1}, 1, 1});

    const auto& blocks = j.at("blocks");
    if (blocks.size() != expected.size()) throw Error(ErrorCode::ParseError, "unexpected block count");
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& b = blocks.at(i);
      if (b.at("name").get<std::string>() != expected[i].name) {
        throw Error(ErrorCode::ParseError, "block " + std::to_string(i) + " should be " + expected[i].name);
      }
      bin.seekg(static_cast<std::streamoff>(b.at("offset").get<std::size_t>()));
      const Matrix m = read_embeddings(bin);
      if (m.rows() != expected[i].rows || m.cols() != expected[i].cols) {
        throw Error(ErrorCode::ShapeMismatch, "block " + expected[i].name);
      }
      std::copy(m.data().begin(), m.data().end(), expected[i].data.begin());
    }
    model.head.tau = tau;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::ParseError, with_ext(base, ".json").string() + ": " + ex.what());
  }
  return model;
}

}  // namespace zsmil

// SPDX-License-Identifier: Apache-2.0
#include "prototypes.hpp"

#include <cmath>
#include <fstream>
#include <set>

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

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + ex.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  out << text;
}

}  // namespace

PrototypeSet ensemble(const std::vector<TemplateEmbeddings>& per_class, double temperature) {
  if (per_class.empty()) throw Error(ErrorCode::EmptyTemplates, "no classes");
  if (per_class.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 classes");
  const std::size_t d = per_class.front().vectors.cols();
  std::set<std::string> names;
  PrototypeSet out;
  out.temperature_default = temperature;
  out.weights = Matrix(per_class.size(), d);
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& t = per_class[c];
    if (!names.insert(t.class_name).second) throw Error(ErrorCode::DuplicateClass, t.class_name);
    if (t.vectors.rows() == 0) throw Error(ErrorCode::EmptyTemplates, t.class_name);
    if (t.vectors.cols() != d) {
      throw Error(ErrorCode::DimMismatch, t.class_name + " has dim " + std::to_string(t.vectors.cols()) +
                                              ", expected " + std::to_string(d));
    }
    if (!t.vectors.all_finite()) throw Error(ErrorCode::NonFiniteValue, t.class_name);

    Vector mean(d, 0.0);
    for (std::size_t r = 0; r < t.vectors.rows(); ++r) {
      const Vector unit = l2_normalize(t.vectors.row(r));
      for (std::size_t j = 0; j < d; ++j) mean[j] += unit[j];
    }
    for (double& v : mean) v /= static_cast<double>(t.vectors.rows());
    if (!(norm2(mean) > kZeroNormEps)) {
      throw Error(ErrorCode::EnsembleDegenerate, t.class_name + ": templates cancel out");
    }
    const Vector proto = l2_normalize(mean);
    std::copy(proto.begin(), proto.end(), out.weights.row(c).begin());
    out.class_names.push_back(t.class_name);
  }
  return out;
}

void validate(const PrototypeSet& protos) {
  if (protos.num_classes() < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 classes");
  if (protos.class_names.size() != protos.num_classes()) {
    throw Error(ErrorCode::SidecarMismatch, "class name count != prototype rows");
  }
  if (std::set<std::string>(protos.class_names.begin(), protos.class_names.end()).size() !=
      protos.class_names.size()) {
    throw Error(ErrorCode::DuplicateClass, "class names must be unique");
  }
  if (!(protos.temperature_default > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be > 0");
  for (std::size_t c = 0; c < protos.num_classes(); ++c) {
    if (std::abs(norm2(protos.weights.row(c)) - 1.0) > 1e-9) {
      throw Error(ErrorCode::InvalidArgument, "prototype row " + std::to_string(c) + " is not unit norm");
    }
  }
}

std::filesystem::path pair_base(const std::filesystem::path& path) {
  const auto ext = path.extension();
  if (ext == ".zsml" || ext == ".json") {
    auto p = path;
    p.replace_extension();
    return p;
  }
  return path;
}

void save_prototypes(const PrototypeSet& protos, const std::filesystem::path& base) {
  validate(protos);
  write_embeddings(protos.weights, with_ext(base, ".zsml"));
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["class_names"] = protos.class_names;
  j["temperature_default"] = protos.temperature_default;
  write_text(with_ext(base, ".json"), j.dump(2) + "\n");
}

PrototypeSet load_prototypes(const std::filesystem::path& base_in) {
  const auto base = pair_base(base_in);
  PrototypeSet protos;
  Matrix raw = read_embeddings(with_ext(base, ".zsml"));
  const auto j = read_json(with_ext(base, ".json"));
  try {
    protos.class_names = j.at("class_names").get<std::vector<std::string>>();
    protos.temperature_default = j.value("temperature_default", kDefaultTemperature);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::ParseError, base.string() + ".json: " + ex.what());
  }
  if (protos.class_names.size() != raw.rows()) {
    throw Error(ErrorCode::SidecarMismatch, std::to_string(raw.rows()) + " rows but " +
                                                std::to_string(protos.class_names.size()) + " names");
  }
  for (std::size_t c = 0; c < raw.rows(); ++c) {
    const Vector unit = l2_normalize(raw.row(c));
    std::copy(unit.begin(), unit.end(), raw.row(c).begin());
  }
  protos.weights = std::move(raw);
  validate(protos);
  return protos;
}

std::vector<TemplateEmbeddings> load_templates(const std::filesystem::path& base_in) {
  const auto base = pair_base(base_in);
  const Matrix all = read_embeddings(with_ext(base, ".zsml"));
  const auto j = read_json(with_ext(base, ".json"));
  std::vector<TemplateEmbeddings> out;
  std::size_t offset = 0;
  try {
    for (const auto& cls : j.at("classes")) {
      TemplateEmbeddings t;
      t.class_name = cls.at("name").get<std::string>();
      const auto rows = cls.at("rows").get<std::size_t>();
      if (offset + rows > all.rows()) {
        throw Error(ErrorCode::SidecarMismatch, "sidecar lists more rows than " + base.string() + ".zsml holds");
      }
      t.vectors = Matrix(rows, all.cols());
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy(all.row(offset + r).begin(), all.row(offset + r).end(), t.vectors.row(r).begin());
      }
      offset += rows;
      out.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::ParseError, base.string() + ".json: " + ex.what());
  }
  if (offset != all.rows()) {
    throw Error(ErrorCode::SidecarMismatch, "sidecar covers " + std::to_string(offset) + " of " +
                                                std::to_string(all.rows()) + " rows");
  }
  return out;
}

void save_templates(const std::vector<TemplateEmbeddings>& per_class, const std::filesystem::path& base) {
  if (per_class.empty()) throw Error(ErrorCode::EmptyTemplates, "no classes");
  const std::size_t d = per_class.front().vectors.cols();
  std::size_t total = 0;
  for (const auto& t : per_class) {
    if (t.vectors.cols() != d) throw Error(ErrorCode::DimMismatch, t.class_name);
    total += t.vectors.rows();
  }
  Matrix all(total, d);
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["kind"] = "templates";
  j["classes"] = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& t : per_class) {
    for (std::size_t r = 0; r < t.vectors.rows(); ++r, ++offset) {
      std::copy(t.vectors.row(r).begin(), t.vectors.row(r).end(), all.row(offset).begin());
    }
    j["classes"].push_back({{"name", t.class_name}, {"rows", t.vectors.rows()}});
  }
  write_embeddings(all, with_ext(base, ".zsml"));
  write_text(with_ext(base, ".json"), j.dump(2) + "\n");
}

}  // namespace zsmil

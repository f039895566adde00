// SPDX-License-Identifier: Apache-2.0
#include "zsmil/zsmil.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include <json.hpp>

#include "data_io.hpp"
#include "error.hpp"
#include "model_io.hpp"
#include "protocol.hpp"
#include "prototypes.hpp"
#include "synthetic.hpp"
#include "zeroshot.hpp"

struct zsmil_dataset {
  zsmil::Manifest manifest;
};

struct zsmil_prototypes {
  zsmil::PrototypeSet protos;
};

struct zsmil_model {
  zsmil::TrainedModel model;
};

struct zsmil_report {
  zsmil::RunReport report;
};

namespace {

thread_local std::string g_last_error;

zsmil_status fail(zsmil_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs fn, translating exceptions into status codes.
template <typename Fn>
zsmil_status guarded(Fn&& fn) {
  try {
    fn();
    return ZSMIL_OK;
  } catch (const zsmil::Error& e) {
    return fail(static_cast<zsmil_status>(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(ZSMIL_ERR_PARSE, std::string("ParseError: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(ZSMIL_ERR_INTERNAL, "Internal: out of memory");
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(ZSMIL_ERR_IO, std::string("IoError: ") + e.what());
  } catch (const std::exception& e) {
    return fail(ZSMIL_ERR_INTERNAL, std::string("Internal: ") + e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw zsmil::Error(zsmil::ErrorCode::InvalidArgument, what);
}

nlohmann::json parse_json_arg(const char* text, const char* what) {
  require(text != nullptr, what);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw zsmil::Error(zsmil::ErrorCode::InvalidArgument, std::string(what) + ": " + e.what());
  }
}

zsmil::ProtocolConfig protocol_config_from_json(const nlohmann::json& j) {
  using zsmil::Error;
  using zsmil::ErrorCode;
  zsmil::ProtocolConfig c;
  try {
    if (!j.contains("seed")) throw Error(ErrorCode::InvalidArgument, "config: \"seed\" is required");
    c.seed = j.at("seed").get<std::uint64_t>();
    const std::string preset = j.value("preset", "");
    if (preset == "ablate-init") {
      c.arms = zsmil::init_ablation_arms();
      c.title = "Head initialization ablation (ABMIL aggregator)";
    } else if (preset == "ablate-agg") {
      c.arms = zsmil::aggregator_ablation_arms();
      c.title = "Aggregator comparison with zero-shot head initialization";
    } else if (!preset.empty()) {
      throw Error(ErrorCode::InvalidArgument, "unknown preset " + preset);
    }
    if (j.contains("arms")) {
      c.arms.clear();
      for (const auto& a : j.at("arms")) {
        zsmil::Arm arm;
        const auto agg = zsmil::parse_aggregator(a.at("aggregator").get<std::string>());
        const auto init = zsmil::parse_init(a.at("init").get<std::string>());
        if (!agg) throw Error(ErrorCode::InvalidArgument, "unknown aggregator " + a.at("aggregator").dump());
        if (!init) throw Error(ErrorCode::InvalidArgument, "unknown init " + a.at("init").dump());
        arm.aggregator = *agg;
        arm.init = *init;
        arm.label = a.value("label", std::string(zsmil::init_label(*init)) + "/" + zsmil::aggregator_name(*agg));
        c.arms.push_back(std::move(arm));
      }
    }
    if (c.arms.empty()) throw Error(ErrorCode::InvalidArgument, "config needs \"preset\" or \"arms\"");
    c.title = j.value("title", c.title);
    c.k_values = j.value("k_values", c.k_values);
    c.repeats = j.value("repeats", c.repeats);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("model_dir")) c.model_dir = j.at("model_dir").get<std::string>();
    if (j.contains("train")) c.train = zsmil::train_config_from_json(j.at("train"));
    if (j.contains("provenance")) c.provenance = j.at("provenance");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  for (std::size_t k : c.k_values) require(k >= 1, "k values must be >= 1");
  return c;
}

}  // namespace

extern "C" {

const char* zsmil_version(void) { return "1.0.0"; }

const char* zsmil_status_name(zsmil_status status) {
  return zsmil::error_name(static_cast<zsmil::ErrorCode>(status));
}

const char* zsmil_last_error(void) { return g_last_error.c_str(); }

int zsmil_status_exit_code(zsmil_status status) {
  switch (status) {
    case ZSMIL_OK:
      return 0;
    case ZSMIL_ERR_INVALID_ARGUMENT:
    case ZSMIL_ERR_INVALID_SPEC:
      return 2;
    case ZSMIL_ERR_NON_FINITE_LOSS:
    case ZSMIL_ERR_ZERO_NORM:
    case ZSMIL_ERR_ENSEMBLE_DEGENERATE:
      return 4;
    default:
      return 3;
  }
}

void zsmil_free_string(char* s) { std::free(s); }

zsmil_status zsmil_embeddings_write(const char* path, const float* data, uint64_t rows, uint64_t cols) {
  return guarded([&] {
    require(path != nullptr, "path is null");
    require(data != nullptr || rows * cols == 0, "data is null");
    zsmil::Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = data[i];
    zsmil::write_embeddings(m, path);
  });
}

zsmil_status zsmil_embeddings_read(const char* path, float** data, uint64_t* rows, uint64_t* cols) {
  return guarded([&] {
    require(path && data && rows && cols, "null argument");
    const zsmil::Matrix m = zsmil::read_embeddings(path);
    auto* buf = static_cast<float*>(std::malloc(std::max<std::size_t>(1, m.size()) * sizeof(float)));
    if (!buf) throw std::bad_alloc();
    for (std::size_t i = 0; i < m.size(); ++i) buf[i] = static_cast<float>(m.data()[i]);
    *data = buf;
    *rows = m.rows();
    *cols = m.cols();
  });
}

void zsmil_free_floats(float* data) { std::free(data); }

zsmil_status zsmil_synth(const char* spec_json, const char* out_dir) {
  return guarded([&] {
    require(out_dir != nullptr, "out_dir is null");
    const auto j = parse_json_arg(spec_json, "spec");
    if (!j.contains("seed")) throw zsmil::Error(zsmil::ErrorCode::InvalidArgument, "spec: \"seed\" is required");
    zsmil::write_synthetic(zsmil::synthetic_spec_from_json(j), out_dir);
  });
}

zsmil_status zsmil_prototypes_load(const char* path, zsmil_prototypes** out) {
  return guarded([&] {
    require(path && out, "null argument");
    auto p = std::make_unique<zsmil_prototypes>();
    p->protos = zsmil::load_prototypes(path);
    *out = p.release();
  });
}

zsmil_status zsmil_prototypes_from_templates(const char* templates_path, double temperature,
                                             zsmil_prototypes** out) {
  return guarded([&] {
    require(templates_path && out, "null argument");
    require(temperature > 0.0, "temperature must be > 0");
    auto p = std::make_unique<zsmil_prototypes>();
    p->protos = zsmil::ensemble(zsmil::load_templates(templates_path), temperature);
    *out = p.release();
  });
}

zsmil_status zsmil_prototypes_save(const zsmil_prototypes* protos, const char* base) {
  return guarded([&] {
    require(protos && base, "null argument");
    zsmil::save_prototypes(protos->protos, base);
  });
}

size_t zsmil_prototypes_num_classes(const zsmil_prototypes* protos) {
  return protos ? protos->protos.num_classes() : 0;
}

size_t zsmil_prototypes_dim(const zsmil_prototypes* protos) { return protos ? protos->protos.dim() : 0; }

void zsmil_prototypes_free(zsmil_prototypes* protos) { delete protos; }

zsmil_status zsmil_dataset_open(const char* manifest_path, size_t n_classes, zsmil_dataset** out) {
  return guarded([&] {
    require(manifest_path && out, "null argument");
    auto ds = std::make_unique<zsmil_dataset>();
    ds->manifest = zsmil::load_manifest(manifest_path,
                                        n_classes ? std::optional<std::size_t>(n_classes) : std::nullopt);
    *out = ds.release();
  });
}

size_t zsmil_dataset_size(const zsmil_dataset* ds) { return ds ? ds->manifest.entries.size() : 0; }

void zsmil_dataset_free(zsmil_dataset* ds) { delete ds; }

zsmil_status zsmil_zeroshot(const zsmil_dataset* ds, const zsmil_prototypes* protos, const char* split,
                            char** out_json) {
  return guarded([&] {
    require(ds && protos && split && out_json, "null argument");
    const auto which = zsmil::parse_split(split);
    require(which.has_value(), "split must be train_pool, val or test");
    const auto bags = zsmil::load_bags(ds->manifest, *which);
    if (bags.empty()) throw zsmil::Error(zsmil::ErrorCode::EmptyList, std::string("split ") + split + " is empty");
    for (const auto& b : bags) {
      if (b.entry.label >= protos->protos.num_classes()) {
        throw zsmil::Error(zsmil::ErrorCode::LabelOutOfRange, b.entry.slide_id);
      }
    }
    const auto r = zsmil::zero_shot_predict(bags, protos->protos);
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["split"] = split;
    j["n_bags"] = bags.size();
    j["class_names"] = protos->protos.class_names;
    j["balanced_accuracy"] = r.balanced_accuracy;
    j["per_class_recall"] = r.per_class_recall;
    j["renormalized_rows"] = r.renormalized_rows;
    j["predictions"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.slide_ids.size(); ++i) {
      j["predictions"].push_back(
          {{"slide_id", r.slide_ids[i]}, {"label", r.labels[i]}, {"predicted", r.predictions[i]}, {"scores", r.scores[i]}});
    }
    *out_json = dup_string(j.dump(2));
  });
}

zsmil_status zsmil_run_protocol(const zsmil_dataset* ds, const zsmil_prototypes* protos, const char* config_json,
                                zsmil_report** out) {
  return guarded([&] {
    require(ds && protos && out, "null argument");
    const auto config = protocol_config_from_json(parse_json_arg(config_json, "config"));
    auto r = std::make_unique<zsmil_report>();
    r->report = zsmil::run_protocol(ds->manifest, protos->protos, config);
    *out = r.release();
  });
}

zsmil_status zsmil_report_load(const char* path, zsmil_report** out) {
  return guarded([&] {
    require(path && out, "null argument");
    std::ifstream in(path);
    if (!in) throw zsmil::Error(zsmil::ErrorCode::IoError, std::string("cannot open ") + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw zsmil::Error(zsmil::ErrorCode::ParseError, std::string(path) + ": " + e.what());
    }
    auto r = std::make_unique<zsmil_report>();
    r->report = zsmil::report_from_json(j);
    *out = r.release();
  });
}

zsmil_status zsmil_report_merge(const zsmil_report* const* reports, size_t count, zsmil_report** out) {
  return guarded([&] {
    require(reports && out && count > 0, "need at least one report");
    auto merged = std::make_unique<zsmil_report>();
    merged->report = reports[0]->report;
    for (std::size_t i = 1; i < count; ++i) {
      require(reports[i] != nullptr, "null report");
      const auto& r = reports[i]->report;
      for (std::size_t k : r.k_values) {
        if (std::find(merged->report.k_values.begin(), merged->report.k_values.end(), k) ==
            merged->report.k_values.end()) {
          merged->report.k_values.push_back(k);
        }
      }
      merged->report.arms.insert(merged->report.arms.end(), r.arms.begin(), r.arms.end());
      merged->report.episodes.insert(merged->report.episodes.end(), r.episodes.begin(), r.episodes.end());
      merged->report.repeats = std::max(merged->report.repeats, r.repeats);
    }
    if (count > 1) {
      nlohmann::ordered_json configs = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < count; ++i) configs.push_back(reports[i]->report.config);
      merged->report.config = {{"merged", configs}};
    }
    *out = merged.release();
  });
}

zsmil_status zsmil_report_json(const zsmil_report* report, char** out) {
  return guarded([&] {
    require(report && out, "null argument");
    *out = dup_string(zsmil::to_json(report->report).dump(2) + "\n");
  });
}

zsmil_status zsmil_report_text(const zsmil_report* report, char** out) {
  return guarded([&] {
    require(report && out, "null argument");
    *out = dup_string(zsmil::render_text(report->report));
  });
}

void zsmil_report_free(zsmil_report* report) { delete report; }

zsmil_status zsmil_model_load(const char* path, zsmil_model** out) {
  return guarded([&] {
    require(path && out, "null argument");
    auto m = std::make_unique<zsmil_model>();
    m->model = zsmil::load_model(path);
    *out = m.release();
  });
}

zsmil_status zsmil_model_info(const zsmil_model* model, char** out_json) {
  return guarded([&] {
    require(model && out_json, "null argument");
    const auto& m = model->model;
    nlohmann::ordered_json j;
    j["aggregator"] = zsmil::aggregator_name(m.aggregator.kind);
    j["dim"] = m.aggregator.dims.dim;
    j["n_classes"] = m.head.num_classes();
    j["class_names"] = m.class_names;
    j["tau"] = m.head.tau;
    j["aggregator_param_count"] = zsmil::param_count(m.aggregator.kind, m.aggregator.dims);
    j["best_epoch"] = m.best_epoch;
    j["best_val"] = m.best_val;
    *out_json = dup_string(j.dump(2));
  });
}

zsmil_status zsmil_export_attention(const zsmil_model* model, const zsmil_dataset* ds, const char* slide_id,
                                    const char* out_base) {
  return guarded([&] {
    require(model && ds && slide_id && out_base, "null argument");
    const zsmil::ManifestEntry* entry = ds->manifest.find(slide_id);
    if (!entry) throw zsmil::Error(zsmil::ErrorCode::NotFound, std::string("slide ") + slide_id);
    zsmil::Bag bag{*entry, zsmil::read_embeddings(ds->manifest.resolve(*entry))};
    zsmil::write_attention(zsmil::attention_for_bag(model->model, bag), out_base);
  });
}

void zsmil_model_free(zsmil_model* model) { delete model; }

}  // extern "C"

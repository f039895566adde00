// SPDX-License-Identifier: Apache-2.0
//
// zsmil: command-line front end over the libzsmil C API.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
// Failures print one line to stderr:
//   error code=<StatusName> exit=<n> message="<text>"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "zsmil/zsmil.h"

namespace {

using json = nlohmann::ordered_json;

struct CliFailure {
  int exit_code;
  std::string code;
  std::string message;
};

[[noreturn]] void usage_error(const std::string& message) { throw CliFailure{2, "Usage", message}; }

void check(zsmil_status status) {
  if (status != ZSMIL_OK) {
    throw CliFailure{zsmil_status_exit_code(status), zsmil_status_name(status), zsmil_last_error()};
  }
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out;
}

struct StringDeleter {
  void operator()(char* s) const { zsmil_free_string(s); }
};
using OwnedString = std::unique_ptr<char, StringDeleter>;

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& o) noexcept : ptr(o.ptr) { o.ptr = nullptr; }
  ~Handle() {
    if (ptr) Free(ptr);
  }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};
using Dataset = Handle<zsmil_dataset, zsmil_dataset_free>;
using Prototypes = Handle<zsmil_prototypes, zsmil_prototypes_free>;
using Report = Handle<zsmil_report, zsmil_report_free>;
using Model = Handle<zsmil_model, zsmil_model_free>;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliFailure{3, "IoError", "cannot open " + path};
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CliFailure{2, "Usage", path + ": " + e.what()};
  }
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << text;
  if (!out) throw CliFailure{3, "IoError", "cannot write " + path.string()};
}

Prototypes open_prototypes(const std::string& path) {
  Prototypes p;
  check(zsmil_prototypes_load(path.c_str(), p.out()));
  return p;
}

Dataset open_dataset(const std::string& manifest, std::size_t n_classes) {
  Dataset d;
  check(zsmil_dataset_open(manifest.c_str(), n_classes, d.out()));
  return d;
}

// Options shared by train / ablate-init / ablate-agg.
struct ProtocolFlags {
  std::string manifest;
  std::string protos;
  std::string config;
  std::string out;
  std::vector<std::size_t> k_values;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::size_t epochs = 0;
  std::size_t patience = 0;
  double lr = 0.0;
  std::string optimizer;
  double tau = 0.0;
  bool learn_tau = false;
  bool freeze_head = false;
  bool save_models = false;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* k_opt = nullptr;
  CLI::Option* repeats_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* patience_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* optimizer_opt = nullptr;
  CLI::Option* tau_opt = nullptr;
  CLI::Option* learn_tau_opt = nullptr;
  CLI::Option* freeze_opt = nullptr;
};

void add_protocol_flags(CLI::App* cmd, ProtocolFlags& f, bool models_by_default) {
  cmd->add_option("--manifest", f.manifest, "Dataset manifest (JSON lines)")->required();
  cmd->add_option("--protos", f.protos, "Prototype file pair (<base>, <base>.zsml or <base>.json)")->required();
  f.seed_opt = cmd->add_option("--seed", f.seed, "Base seed for episodes and initializations")->required();
  cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_option("--config", f.config, "JSON config; explicit flags override it");
  f.k_opt = cmd->add_option("--k", f.k_values, "Shots per class (repeatable)");
  f.repeats_opt = cmd->add_option("--repeats", f.repeats, "Episodes per k");
  cmd->add_option("--jobs", f.jobs, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  f.epochs_opt = cmd->add_option("--epochs", f.epochs, "Training epochs")->check(CLI::PositiveNumber);
  f.patience_opt = cmd->add_option("--patience", f.patience, "Early-stopping patience in epochs");
  f.lr_opt = cmd->add_option("--lr", f.lr, "Learning rate")->check(CLI::PositiveNumber);
  f.optimizer_opt = cmd->add_option("--optimizer", f.optimizer, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));
  f.tau_opt = cmd->add_option("--tau", f.tau, "Softmax temperature")->check(CLI::PositiveNumber);
  f.learn_tau_opt = cmd->add_flag("--learn-tau", f.learn_tau, "Train the temperature");
  f.freeze_opt = cmd->add_flag("--freeze-head", f.freeze_head, "Keep the classifier weights fixed");
  if (!models_by_default) cmd->add_flag("--save-models", f.save_models, "Also write every trained model");
}

// Merges --config with the explicit flags (flags win) into a protocol config.
json protocol_config(const ProtocolFlags& f, json base_arms_or_preset) {
  json cfg = f.config.empty() ? json::object() : read_json_file(f.config);
  if (!cfg.is_object()) usage_error("--config must hold a JSON object");
  for (auto& [key, value] : base_arms_or_preset.items()) cfg[key] = value;
  json train = cfg.contains("train") ? cfg["train"] : json::object();
  // Top-level training keys in the config file are accepted as a convenience.
  for (const char* key : {"epochs", "patience", "tau", "learn_tau", "freeze_head", "optimizer", "attention_hidden",
                          "head_dim"}) {
    if (cfg.contains(key)) {
      train[key] = cfg[key];
      cfg.erase(key);
    }
  }
  if (f.epochs_opt->count()) train["epochs"] = f.epochs;
  if (f.patience_opt->count()) train["patience"] = f.patience;
  if (f.tau_opt->count()) train["tau"] = f.tau;
  if (f.learn_tau_opt->count()) train["learn_tau"] = true;
  if (f.freeze_opt->count()) train["freeze_head"] = true;
  if (f.lr_opt->count() || f.optimizer_opt->count()) {
    json opt = train.contains("optimizer") ? train["optimizer"] : json::object();
    if (f.lr_opt->count()) opt["lr"] = f.lr;
    if (f.optimizer_opt->count()) opt["kind"] = f.optimizer;
    train["optimizer"] = opt;
  }
  cfg["train"] = train;
  cfg["seed"] = f.seed;
  if (f.k_opt->count()) cfg["k_values"] = f.k_values;
  if (!cfg.contains("k_values")) cfg["k_values"] = {4, 16};
  if (f.repeats_opt->count() || !cfg.contains("repeats")) cfg["repeats"] = f.repeats;
  cfg["jobs"] = f.jobs;
  cfg["provenance"] = {{"manifest", f.manifest}, {"prototypes", f.protos}};
  return cfg;
}

void run_protocol_command(const ProtocolFlags& f, const json& cfg_in, bool save_models) {
  json cfg = cfg_in;
  const std::filesystem::path out_dir(f.out);
  std::filesystem::create_directories(out_dir);
  if (save_models) cfg["model_dir"] = (out_dir / "models").string();

  Prototypes protos = open_prototypes(f.protos);
  Dataset ds = open_dataset(f.manifest, zsmil_prototypes_num_classes(protos.get()));
  Report report;
  check(zsmil_run_protocol(ds.get(), protos.get(), cfg.dump().c_str(), report.out()));

  char* raw = nullptr;
  check(zsmil_report_json(report.get(), &raw));
  OwnedString report_json(raw);
  check(zsmil_report_text(report.get(), &raw));
  OwnedString report_text(raw);
  write_file(out_dir / "report.json", report_json.get());
  write_file(out_dir / "report.txt", report_text.get());
  std::cout << report_text.get();
}

std::string arm_label(const std::string& agg, const std::string& init) {
  static const std::map<std::string, std::string> agg_names{
      {"bgap", "BGAP"}, {"bgmp", "BGMP"}, {"abmil", "ABMIL"}, {"transformer", "SIMPLE_TRANSFORMER"}};
  static const std::map<std::string, std::string> init_names{{"kaiming-uniform", "Kaiming uniform"},
                                                             {"kaiming-normal", "Kaiming normal"},
                                                             {"xavier-uniform", "Xavier uniform"},
                                                             {"xavier-normal", "Xavier normal"}};
  if (init == "zeroshot") return "ZS-" + agg_names.at(agg);
  return init_names.at(init) + " (" + agg_names.at(agg) + ")";
}

int run(int argc, char** argv) {
  CLI::App app{"Zero-shot-initialized multiple-instance learning over patch embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", zsmil_version());

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic slide-embedding dataset");
  std::string synth_spec, synth_out;
  std::uint64_t synth_seed = 0;
  std::size_t s_classes = 2, s_dim = 64, s_train = 60, s_val = 15, s_test = 15, s_min = 48, s_max = 144;
  double s_evidence = 0.3, s_sep = 1.0, s_sigma = 1.0, s_pnoise = 0.3;
  synth->add_option("--spec", synth_spec, "JSON synthetic spec; explicit flags override it");
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output directory")->required();
  std::vector<std::pair<CLI::Option*, std::string>> synth_flags{
      {synth->add_option("--classes", s_classes, "Number of classes")->check(CLI::Range(2, 1 << 20)), "n_classes"},
      {synth->add_option("--dim", s_dim, "Embedding dimension")->check(CLI::Range(2, 1 << 20)), "dim"},
      {synth->add_option("--train-pool", s_train, "Train-pool bags for the majority class"), "train_pool"},
      {synth->add_option("--val", s_val, "Val bags for the majority class"), "val"},
      {synth->add_option("--test", s_test, "Test bags for the majority class"), "test"},
      {synth->add_option("--min-patches", s_min, "Fewest patches per bag"), "min_patches"},
      {synth->add_option("--max-patches", s_max, "Most patches per bag"), "max_patches"},
      {synth->add_option("--evidence", s_evidence, "Fraction of class-evidence patches"), "evidence_fraction"},
      {synth->add_option("--separation", s_sep, "Class separation"), "class_separation"},
      {synth->add_option("--sigma", s_sigma, "Patch noise standard deviation"), "noise_sigma"},
      {synth->add_option("--proto-noise", s_pnoise, "Prototype noise"), "prototype_noise"},
  };

  // build-prototypes
  auto* build = app.add_subcommand("build-prototypes", "Ensemble prompt-template embeddings into class prototypes");
  std::string tmpl_path, build_out;
  double build_tau = 0.07;
  build->add_option("--templates", tmpl_path, "Template file pair from the feature exporter")->required();
  build->add_option("--out", build_out, "Output base path for <out>.zsml / <out>.json")->required();
  build->add_option("--tau", build_tau, "Default temperature stored with the prototypes")->check(CLI::PositiveNumber);

  // zeroshot
  auto* zs = app.add_subcommand("zeroshot", "Zero-shot slide classification by mean patch similarity");
  std::string zs_manifest, zs_protos, zs_split = "test", zs_out;
  zs->add_option("--manifest", zs_manifest, "Dataset manifest")->required();
  zs->add_option("--protos", zs_protos, "Prototype file pair")->required();
  zs->add_option("--split", zs_split, "Split to score")->check(CLI::IsMember({"train_pool", "val", "test"}));
  zs->add_option("--out", zs_out, "Optional JSON output with per-bag predictions");

  // train
  auto* train = app.add_subcommand("train", "Few-shot training protocol for one aggregator/init pair");
  ProtocolFlags train_flags;
  std::string agg = "abmil", init = "zeroshot";
  add_protocol_flags(train, train_flags, true);
  train->add_option("--agg", agg, "Aggregator")->check(CLI::IsMember({"bgap", "bgmp", "abmil", "transformer"}));
  train->add_option("--init", init, "Head initialization")
      ->check(CLI::IsMember({"zeroshot", "kaiming-uniform", "kaiming-normal", "xavier-uniform", "xavier-normal"}));

  // ablations
  auto* ablate_init = app.add_subcommand("ablate-init", "Compare the five head initializations on ABMIL");
  ProtocolFlags ai_flags;
  add_protocol_flags(ablate_init, ai_flags, false);
  auto* ablate_agg = app.add_subcommand("ablate-agg", "Compare the four aggregators with zero-shot heads");
  ProtocolFlags aa_flags;
  add_protocol_flags(ablate_agg, aa_flags, false);

  // export-attention
  auto* exp = app.add_subcommand("export-attention", "Write per-patch attention weights for one slide");
  std::string exp_model, exp_manifest, exp_slide, exp_out;
  exp->add_option("--model", exp_model, "Trained model (<base>, <base>.zsmodel or <base>.json)")->required();
  exp->add_option("--manifest", exp_manifest, "Dataset manifest")->required();
  exp->add_option("--slide-id", exp_slide, "Slide to export")->required();
  exp->add_option("--out", exp_out, "Output base path for <out>.csv / <out>.json")->required();

  // report
  auto* rep = app.add_subcommand("report", "Render one or more run reports");
  std::vector<std::string> rep_in;
  std::string rep_format = "text";
  rep->add_option("--in", rep_in, "report.json files")->required();
  rep->add_option("--format", rep_format, "text or json")->check(CLI::IsMember({"text", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    throw CliFailure{2, "Usage", e.what()};
  }

  if (*synth) {
    json spec = synth_spec.empty() ? json::object() : read_json_file(synth_spec);
    if (!spec.is_object()) usage_error("--spec must hold a JSON object");
    for (const auto& [opt, key] : synth_flags) {
      if (!opt->count()) continue;
      if (key == "n_classes") spec[key] = s_classes;
      else if (key == "dim") spec[key] = s_dim;
      else if (key == "train_pool") spec["bags_per_class"]["train_pool"] = s_train;
      else if (key == "val") spec["bags_per_class"]["val"] = s_val;
      else if (key == "test") spec["bags_per_class"]["test"] = s_test;
      else if (key == "min_patches" || key == "max_patches") {
        json range = spec.contains("patches_per_bag") ? spec["patches_per_bag"] : json::array({s_min, s_max});
        range[key == "min_patches" ? 0 : 1] = key == "min_patches" ? s_min : s_max;
        spec["patches_per_bag"] = range;
      } else if (key == "evidence_fraction") spec[key] = s_evidence;
      else if (key == "class_separation") spec[key] = s_sep;
      else if (key == "noise_sigma") spec[key] = s_sigma;
      else if (key == "prototype_noise") spec[key] = s_pnoise;
    }
    if (synth_seed_opt->count()) spec["seed"] = synth_seed;
    if (!spec.contains("seed")) usage_error("synth needs --seed (or \"seed\" in --spec)");
    check(zsmil_synth(spec.dump().c_str(), synth_out.c_str()));
    std::cout << "wrote " << (std::filesystem::path(synth_out) / "manifest.jsonl").string() << " and "
              << (std::filesystem::path(synth_out) / "prototypes").string() << ".{zsml,json}\n";
    return 0;
  }

  if (*build) {
    Prototypes p;
    check(zsmil_prototypes_from_templates(tmpl_path.c_str(), build_tau, p.out()));
    check(zsmil_prototypes_save(p.get(), build_out.c_str()));
    std::cout << "wrote " << zsmil_prototypes_num_classes(p.get()) << " prototypes of dim "
              << zsmil_prototypes_dim(p.get()) << " to " << build_out << ".{zsml,json}\n";
    return 0;
  }

  if (*zs) {
    Prototypes protos = open_prototypes(zs_protos);
    Dataset ds = open_dataset(zs_manifest, zsmil_prototypes_num_classes(protos.get()));
    char* raw = nullptr;
    check(zsmil_zeroshot(ds.get(), protos.get(), zs_split.c_str(), &raw));
    OwnedString text(raw);
    const auto j = json::parse(text.get());
    if (!zs_out.empty()) write_file(zs_out, std::string(text.get()) + "\n");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", j["balanced_accuracy"].get<double>());
    std::cout << "split: " << zs_split << " (" << j["n_bags"].get<std::size_t>() << " bags)\n";
    std::cout << "balanced_accuracy: " << buf << '\n';
    const auto names = j["class_names"];
    const auto recalls = j["per_class_recall"];
    for (std::size_t c = 0; c < recalls.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.4f", recalls[c].get<double>());
      std::cout << "recall[" << names[c].get<std::string>() << "]: " << buf << '\n';
    }
    if (j["renormalized_rows"].get<std::size_t>() > 0) {
      std::cerr << "warning: renormalized " << j["renormalized_rows"].get<std::size_t>()
                << " patch rows that were not unit norm\n";
    }
    return 0;
  }

  if (*train) {
    json arms = json::array({{{"label", arm_label(agg, init)}, {"aggregator", agg}, {"init", init}}});
    json cfg = protocol_config(train_flags, {{"arms", arms}, {"title", "Few-shot run: " + arm_label(agg, init)}});
    run_protocol_command(train_flags, cfg, true);
    return 0;
  }
  if (*ablate_init) {
    run_protocol_command(ai_flags, protocol_config(ai_flags, {{"preset", "ablate-init"}}), ai_flags.save_models);
    return 0;
  }
  if (*ablate_agg) {
    run_protocol_command(aa_flags, protocol_config(aa_flags, {{"preset", "ablate-agg"}}), aa_flags.save_models);
    return 0;
  }

  if (*exp) {
    Model model;
    check(zsmil_model_load(exp_model.c_str(), model.out()));
    Dataset ds = open_dataset(exp_manifest, 0);
    check(zsmil_export_attention(model.get(), ds.get(), exp_slide.c_str(), exp_out.c_str()));
    std::cout << "wrote " << exp_out << ".csv and " << exp_out << ".json\n";
    return 0;
  }

  if (*rep) {
    std::vector<Report> reports;
    std::vector<const zsmil_report*> ptrs;
    for (const auto& path : rep_in) {
      Report r;
      check(zsmil_report_load(path.c_str(), r.out()));
      ptrs.push_back(r.get());
      reports.push_back(std::move(r));
    }
    Report merged;
    check(zsmil_report_merge(ptrs.data(), ptrs.size(), merged.out()));
    char* raw = nullptr;
    check(rep_format == "json" ? zsmil_report_json(merged.get(), &raw) : zsmil_report_text(merged.get(), &raw));
    OwnedString text(raw);
    std::cout << text.get();
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CliFailure& f) {
    std::cerr << "error code=" << f.code << " exit=" << f.exit_code << " message=\"" << escape(f.message) << "\"\n";
    return f.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error code=Internal exit=3 message=\"" << escape(e.what()) << "\"\n";
    return 3;
  }
}

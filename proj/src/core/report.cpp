// SPDX-License-Identifier: Apache-2.0
#include "report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "error.hpp"

namespace zsmil {

std::string format_percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * value);
  return buf;
}

nlohmann::ordered_json to_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["title"] = r.title;
  j["metric"] = "balanced_accuracy";
  j["std_convention"] = "sample standard deviation (n-1); 0 with single_run=true when n=1";
  j["class_names"] = r.class_names;
  j["k_values"] = r.k_values;
  j["repeats"] = r.repeats;
  j["zero_shot"] = {{"label", r.zero_shot.label},
                    {"balanced_accuracy", r.zero_shot.balanced_accuracy},
                    {"per_class_recall", r.zero_shot.per_class_recall},
                    {"n_bags", r.zero_shot.n_bags}};
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& arm : r.arms) {
    nlohmann::ordered_json row;
    row["label"] = arm.label;
    row["aggregator"] = arm.aggregator;
    row["init"] = arm.init;
    row["aggregator_param_count"] = arm.param_count;
    row["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : arm.cells) {
      row["cells"].push_back({{"k", c.k},
                              {"mean", c.summary.mean},
                              {"std", c.summary.std},
                              {"n", c.summary.n},
                              {"single_run", c.summary.single_run},
                              {"values", c.values}});
    }
    j["rows"].push_back(std::move(row));
  }
  j["episodes"] = nlohmann::ordered_json::array();
  for (const auto& e : r.episodes) {
    j["episodes"].push_back({{"arm", e.arm},
                             {"k", e.k},
                             {"repeat", e.repeat},
                             {"episode_seed", e.episode_seed},
                             {"support", e.support},
                             {"test_balanced_accuracy", e.test_balanced_accuracy},
                             {"per_class_recall", e.per_class_recall},
                             {"best_epoch", e.best_epoch},
                             {"best_val_balanced_accuracy", e.best_val},
                             {"epochs_run", e.epochs_run}});
  }
  j["config"] = r.config;
  return j;
}

RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
      throw Error(ErrorCode::UnsupportedVersion, "report schema_version");
    }
    r.title = j.value("title", "");
    r.class_names = j.value("class_names", std::vector<std::string>{});
    r.k_values = j.at("k_values").get<std::vector<std::size_t>>();
    r.repeats = j.at("repeats").get<std::size_t>();
    const auto& zs = j.at("zero_shot");
    r.zero_shot.label = zs.value("label", r.zero_shot.label);
    r.zero_shot.balanced_accuracy = zs.at("balanced_accuracy").get<double>();
    r.zero_shot.per_class_recall = zs.value("per_class_recall", std::vector<double>{});
    r.zero_shot.n_bags = zs.value("n_bags", std::size_t{0});
    for (const auto& row : j.at("rows")) {
      ArmResult arm;
      arm.label = row.at("label").get<std::string>();
      arm.aggregator = row.value("aggregator", "");
      arm.init = row.value("init", "");
      arm.param_count = row.value("aggregator_param_count", std::size_t{0});
      for (const auto& c : row.at("cells")) {
        CellResult cell;
        cell.k = c.at("k").get<std::size_t>();
        cell.values = c.value("values", std::vector<double>{});
        cell.summary.mean = c.at("mean").get<double>();
        cell.summary.std = c.at("std").get<double>();
        cell.summary.n = c.value("n", cell.values.size());
        cell.summary.single_run = c.value("single_run", false);
        arm.cells.push_back(std::move(cell));
      }
      r.arms.push_back(std::move(arm));
    }
    if (j.contains("episodes")) {
      for (const auto& e : j.at("episodes")) {
        EpisodeRecord ep;
        ep.arm = e.at("arm").get<std::string>();
        ep.k = e.at("k").get<std::size_t>();
        ep.repeat = e.at("repeat").get<std::size_t>();
        ep.episode_seed = e.value("episode_seed", std::uint64_t{0});
        ep.support = e.value("support", std::vector<std::string>{});
        ep.test_balanced_accuracy = e.at("test_balanced_accuracy").get<double>();
        ep.per_class_recall = e.value("per_class_recall", std::vector<double>{});
        ep.best_epoch = e.value("best_epoch", std::size_t{0});
        ep.best_val = e.value("best_val_balanced_accuracy", 0.0);
        ep.epochs_run = e.value("epochs_run", std::size_t{0});
        r.episodes.push_back(std::move(ep));
      }
    }
    if (j.contains("config")) r.config = j.at("config");
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::ParseError, std::string("report: ") + ex.what());
  }
  return r;
}

std::string render_text(const RunReport& r) {
  std::vector<std::string> labels{r.zero_shot.label};
  for (const auto& arm : r.arms) labels.push_back(arm.label);
  std::size_t label_w = 0;
  for (const auto& l : labels) label_w = std::max(label_w, l.size());
  label_w += 2;
  constexpr int kCellW = 16;

  std::ostringstream out;
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  // '±' is two bytes in UTF-8 but one column wide.
  auto pad_cell = [](std::string s, std::size_t w) {
    std::size_t cols = 0;
    for (unsigned char ch : s) cols += (ch & 0xC0) != 0x80;
    if (cols < w) s.append(w - cols, ' ');
    return s;
  };

  if (!r.title.empty()) out << r.title << '\n';
  std::string header = pad("", label_w);
  for (std::size_t k : r.k_values) header += pad("k = " + std::to_string(k), kCellW);
  while (!header.empty() && header.back() == ' ') header.pop_back();
  const std::string rule(std::max<std::size_t>(header.size(), label_w + kCellW * r.k_values.size()), '-');
  out << rule << '\n' << header << '\n' << rule << '\n';
  out << pad(r.zero_shot.label, label_w) << format_percent(r.zero_shot.balanced_accuracy) << '\n';
  out << rule << '\n';
  bool any_single = false;
  for (const auto& arm : r.arms) {
    std::string line = pad(arm.label, label_w);
    for (std::size_t k : r.k_values) {
      std::string cell = "-";
      for (const auto& c : arm.cells) {
        if (c.k != k) continue;
        cell = format_percent(c.summary.mean) + "±" + format_percent(c.summary.std);
        if (c.summary.single_run) {
          cell += '*';
          any_single = true;
        }
      }
      line += pad_cell(cell, kCellW);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  }
  out << rule << '\n';
  out << "Balanced accuracy (%), mean±std over " << r.repeats << " repeat(s).\n";
  if (any_single) out << "* single run: std reported as 0 by convention.\n";
  return out.str();
}

}  // namespace zsmil

// SPDX-License-Identifier: Apache-2.0
#include "synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "error.hpp"
#include "rng.hpp"

namespace zsmil {
namespace {

Vector random_unit(Rng& rng, std::size_t d) {
  Vector v(d);
  for (double& x : v) x = rng.normal();
  return l2_normalize(v);
}

std::vector<std::size_t> counts_from_json(const nlohmann::json& v, std::size_t n_classes) {
  if (v.is_array()) return v.get<std::vector<std::size_t>>();
  return imbalanced_counts(v.get<std::size_t>(), n_classes);
}

std::string slide_id(Split split, std::size_t cls, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_c%zu_%04zu", split_name(split), cls, index);
  return buf;
}

}  // namespace

std::vector<std::size_t> imbalanced_counts(std::size_t majority, std::size_t n_classes) {
  std::vector<std::size_t> counts(n_classes, majority);
  if (n_classes == 2) {
    counts[1] = static_cast<std::size_t>(std::lround(static_cast<double>(majority) * 291.0 / 445.0));
  }
  return counts;
}

void validate(const SyntheticSpec& s) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidSpec, msg); };
  if (s.n_classes < 2) fail("n_classes must be >= 2");
  if (s.dim < 2) fail("dim must be >= 2");
  if (s.train_pool_per_class.size() != s.n_classes || s.val_per_class.size() != s.n_classes ||
      s.test_per_class.size() != s.n_classes) {
    fail("per-class bag counts must have n_classes entries");
  }
  if (s.min_patches < 1 || s.min_patches > s.max_patches) fail("need 1 <= min_patches <= max_patches");
  if (!(s.evidence_fraction > 0.0 && s.evidence_fraction <= 1.0)) fail("evidence_fraction must be in (0,1]");
  if (!std::isfinite(s.class_separation) || s.class_separation < 0.0) fail("class_separation must be >= 0");
  if (!std::isfinite(s.noise_sigma) || s.noise_sigma < 0.0) fail("noise_sigma must be >= 0");
  if (!std::isfinite(s.prototype_noise) || s.prototype_noise < 0.0) fail("prototype_noise must be >= 0");
}

nlohmann::ordered_json to_json(const SyntheticSpec& s) {
  nlohmann::ordered_json j;
  j["n_classes"] = s.n_classes;
  j["dim"] = s.dim;
  j["bags_per_class"] = {{"train_pool", s.train_pool_per_class},
                         {"val", s.val_per_class},
                         {"test", s.test_per_class}};
  j["patches_per_bag"] = {s.min_patches, s.max_patches};
  j["evidence_fraction"] = s.evidence_fraction;
  j["class_separation"] = s.class_separation;
  j["noise_sigma"] = s.noise_sigma;
  j["prototype_noise"] = s.prototype_noise;
  j["seed"] = s.seed;
  return j;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.n_classes = j.value("n_classes", s.n_classes);
    if (s.n_classes != 2) {
      s.train_pool_per_class = imbalanced_counts(60, s.n_classes);
      s.val_per_class = imbalanced_counts(15, s.n_classes);
      s.test_per_class = imbalanced_counts(15, s.n_classes);
    }
    s.dim = j.value("dim", s.dim);
    if (j.contains("bags_per_class")) {
      const auto& b = j.at("bags_per_class");
      if (b.contains("train_pool")) s.train_pool_per_class = counts_from_json(b.at("train_pool"), s.n_classes);
      if (b.contains("val")) s.val_per_class = counts_from_json(b.at("val"), s.n_classes);
      if (b.contains("test")) s.test_per_class = counts_from_json(b.at("test"), s.n_classes);
    }
    if (j.contains("patches_per_bag")) {
      const auto range = j.at("patches_per_bag").get<std::vector<std::size_t>>();
      if (range.size() != 2) throw Error(ErrorCode::InvalidSpec, "patches_per_bag must be [min, max]");
      s.min_patches = range[0];
      s.max_patches = range[1];
    }
    s.evidence_fraction = j.value("evidence_fraction", s.evidence_fraction);
    s.class_separation = j.value("class_separation", s.class_separation);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.prototype_noise = j.value("prototype_noise", s.prototype_noise);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::InvalidSpec, ex.what());
  }
  validate(s);
  return s;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const std::size_t d = spec.dim;
  const std::size_t S = spec.n_classes;

  SyntheticDataset out;
  out.class_directions = Matrix(S, d);
  const Vector shared = random_unit(rng, d);
  for (std::size_t c = 0; c < S; ++c) {
    const Vector own = random_unit(rng, d);
    Vector mu(d);
    for (std::size_t j = 0; j < d; ++j) mu[j] = shared[j] + spec.class_separation * own[j];
    mu = l2_normalize(mu);
    std::copy(mu.begin(), mu.end(), out.class_directions.row(c).begin());
  }

  out.prototypes.weights = Matrix(S, d);
  for (std::size_t c = 0; c < S; ++c) {
    Vector p(d);
    for (std::size_t j = 0; j < d; ++j) p[j] = out.class_directions(c, j) + spec.prototype_noise * rng.normal();
    p = l2_normalize(p);
    std::copy(p.begin(), p.end(), out.prototypes.weights.row(c).begin());
    out.prototypes.class_names.push_back("class_" + std::to_string(c));
  }

  const std::pair<Split, const std::vector<std::size_t>*> splits[] = {
      {Split::TrainPool, &spec.train_pool_per_class},
      {Split::Val, &spec.val_per_class},
      {Split::Test, &spec.test_per_class},
  };
  for (const auto& [split, counts] : splits) {
    for (std::size_t c = 0; c < S; ++c) {
      for (std::size_t i = 0; i < (*counts)[c]; ++i) {
        const std::size_t n =
            spec.min_patches + static_cast<std::size_t>(rng.below(spec.max_patches - spec.min_patches + 1));
        const auto n_evidence = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(spec.evidence_fraction * static_cast<double>(n))));

        // Partial Fisher-Yates picks the evidence positions.
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t k = 0; k < n_evidence; ++k) {
          const std::size_t pick = k + static_cast<std::size_t>(rng.below(n - k));
          std::swap(order[k], order[pick]);
        }
        std::vector<bool> is_evidence(n, false);
        for (std::size_t k = 0; k < n_evidence; ++k) is_evidence[order[k]] = true;

        Bag bag;
        bag.features = Matrix(n, d);
        for (std::size_t r = 0; r < n; ++r) {
          Vector x(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double center = is_evidence[r] ? spec.class_separation * out.class_directions(c, j) : 0.0;
            x[j] = center + spec.noise_sigma * rng.normal();
          }
          const Vector unit = l2_normalize(x);
          for (std::size_t j = 0; j < d; ++j) {
            bag.features(r, j) = static_cast<double>(static_cast<float>(unit[j]));
          }
        }
        bag.entry.slide_id = slide_id(split, c, i);
        bag.entry.label = c;
        bag.entry.split = split;
        bag.entry.path = "bags/" + bag.entry.slide_id + ".zsml";
        bag.entry.n_patches = n;
        out.bags.push_back(std::move(bag));
      }
    }
  }
  return out;
}

SyntheticDataset write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  SyntheticDataset ds = generate_synthetic(spec);
  std::filesystem::create_directories(out_dir / "bags");
  std::vector<ManifestEntry> entries;
  for (const auto& bag : ds.bags) {
    write_embeddings(bag.features, out_dir / bag.entry.path);
    entries.push_back(bag.entry);
  }
  write_manifest(entries, out_dir / "manifest.jsonl");
  save_prototypes(ds.prototypes, out_dir / "prototypes");
  std::ofstream spec_out(out_dir / "synthetic_spec.json", std::ios::trunc);
  spec_out << to_json(spec).dump(2) << '\n';
  if (!spec_out) throw Error(ErrorCode::IoError, "cannot write synthetic_spec.json");
  return ds;
}

}  // namespace zsmil

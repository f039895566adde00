// SPDX-License-Identifier: Apache-2.0
#include "protocol.hpp"

#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "error.hpp"
#include "rng.hpp"
#include "zeroshot.hpp"

namespace zsmil {
namespace {

constexpr std::uint64_t kAggregatorStream = 1;
constexpr std::uint64_t kHeadStream = 2;

struct Task {
  std::size_t arm;
  std::size_t k_index;
  std::size_t repeat;
};

std::vector<const Bag*> lookup(const std::map<std::string, const Bag*>& by_id,
                               const std::vector<ManifestEntry>& entries) {
  std::vector<const Bag*> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(by_id.at(e.slide_id));
  return out;
}

}  // namespace

std::vector<Arm> init_ablation_arms() {
  std::vector<Arm> arms;
  for (auto k : {InitKind::KaimingUniform, InitKind::KaimingNormal, InitKind::XavierUniform, InitKind::XavierNormal,
                 InitKind::ZeroShot}) {
    arms.push_back({init_label(k), AggregatorKind::ABMIL, k});
  }
  return arms;
}

std::vector<Arm> aggregator_ablation_arms() {
  std::vector<Arm> arms;
  for (auto k : {AggregatorKind::BGMP, AggregatorKind::BGAP, AggregatorKind::ABMIL,
                 AggregatorKind::SimpleTransformer}) {
    arms.push_back({std::string("ZS-") + aggregator_name(k), k, InitKind::ZeroShot});
  }
  return arms;
}

std::string arm_slug(const Arm& arm) {
  return std::string(aggregator_flag(arm.aggregator)) + "_" + init_name(arm.init);
}

nlohmann::ordered_json to_json(const ProtocolConfig& c) {
  nlohmann::ordered_json j;
  j["arms"] = nlohmann::ordered_json::array();
  for (const auto& a : c.arms) {
    j["arms"].push_back({{"label", a.label}, {"aggregator", aggregator_name(a.aggregator)}, {"init", init_name(a.init)}});
  }
  j["k_values"] = c.k_values;
  j["repeats"] = c.repeats;
  j["seed"] = c.seed;
  j["val_fraction"] = c.val_fraction;
  auto train = to_json(c.train);
  train.erase("aggregator");
  train.erase("init");
  train.erase("aggregator_seed");
  train.erase("head_seed");
  j["train"] = train;
  j["seed_derivation"] = "episode=mix(seed,repeat); aggregator/head init=mix(mix(seed,k),repeat,stream)";
  if (!c.provenance.is_null()) j["inputs"] = c.provenance;
  return j;
}

RunReport run_protocol(const Manifest& manifest, const PrototypeSet& protos, const ProtocolConfig& config) {
  validate(protos);
  if (config.arms.empty()) throw Error(ErrorCode::InvalidArgument, "no arms to run");
  if (config.k_values.empty()) throw Error(ErrorCode::InvalidArgument, "no k values");
  if (config.repeats < 1) throw Error(ErrorCode::InvalidArgument, "repeats must be >= 1");
  validate(config.train);
  const std::size_t S = protos.num_classes();

  std::vector<Bag> all_bags;
  for (auto split : {Split::TrainPool, Split::Val, Split::Test}) {
    auto bags = load_bags(manifest, split);
    std::move(bags.begin(), bags.end(), std::back_inserter(all_bags));
  }
  std::map<std::string, const Bag*> by_id;
  std::vector<const Bag*> test;
  for (const auto& b : all_bags) {
    if (b.entry.label >= S) throw Error(ErrorCode::LabelOutOfRange, b.entry.slide_id);
    if (b.features.cols() != protos.dim()) throw Error(ErrorCode::DimMismatch, b.entry.slide_id);
    by_id[b.entry.slide_id] = &b;
    if (b.entry.split == Split::Test) test.push_back(&b);
  }
  if (test.empty()) throw Error(ErrorCode::EmptyList, "manifest has no test split");

  RunReport report;
  report.title = config.title;
  report.config = to_json(config);
  report.class_names = protos.class_names;
  report.k_values = config.k_values;
  report.repeats = config.repeats;

  const auto zs = zero_shot_predict(test, protos);
  report.zero_shot.balanced_accuracy = zs.balanced_accuracy;
  report.zero_shot.per_class_recall = zs.per_class_recall;
  report.zero_shot.n_bags = test.size();

  // Episodes are shared by all arms.
  std::vector<std::vector<EpisodeSelection>> episodes(config.k_values.size());
  for (std::size_t ki = 0; ki < config.k_values.size(); ++ki) {
    for (std::size_t rep = 0; rep < config.repeats; ++rep) {
      episodes[ki].push_back(
          sample_episode(manifest, S, {config.k_values[ki], rep, config.seed, config.val_fraction}));
    }
  }

  std::vector<Task> tasks;
  for (std::size_t a = 0; a < config.arms.size(); ++a)
    for (std::size_t ki = 0; ki < config.k_values.size(); ++ki)
      for (std::size_t rep = 0; rep < config.repeats; ++rep) tasks.push_back({a, ki, rep});

  std::vector<EpisodeRecord> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        const Task& t = tasks[i];
        const Arm& arm = config.arms[t.arm];
        const std::size_t k = config.k_values[t.k_index];
        const EpisodeSelection& ep = episodes[t.k_index][t.repeat];

        TrainConfig tc = config.train;
        tc.aggregator = arm.aggregator;
        tc.init = arm.init;
        const std::uint64_t cell_seed = mix_seed(config.seed, k);
        tc.aggregator_seed = mix_seed(cell_seed, t.repeat, kAggregatorStream);
        tc.head_seed = mix_seed(cell_seed, t.repeat, kHeadStream);

        TrainedModel model = train(lookup(by_id, ep.support), lookup(by_id, ep.val), protos, tc);
        model.episode_seed = ep.seed;
        const Evaluation ev = evaluate(model, test);

        EpisodeRecord& rec = results[i];
        rec.arm = arm.label;
        rec.k = k;
        rec.repeat = t.repeat;
        rec.episode_seed = ep.seed;
        for (const auto& e : ep.support) rec.support.push_back(e.slide_id);
        rec.test_balanced_accuracy = ev.balanced_accuracy;
        rec.per_class_recall = ev.per_class_recall;
        rec.best_epoch = model.best_epoch;
        rec.best_val = model.best_val;
        rec.epochs_run = model.train_loss.size();
        if (config.model_dir) {
          save_model(model, *config.model_dir /
                                (arm_slug(arm) + "_k" + std::to_string(k) + "_r" + std::to_string(t.repeat)));
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(tasks.size());
        return;
      }
    }
  };

  if (config.model_dir) std::filesystem::create_directories(*config.model_dir);
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(config.jobs, tasks.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t a = 0; a < config.arms.size(); ++a) {
    ArmResult arm;
    arm.label = config.arms[a].label;
    arm.aggregator = aggregator_name(config.arms[a].aggregator);
    arm.init = init_name(config.arms[a].init);
    arm.param_count = param_count(config.arms[a].aggregator,
                                  {protos.dim(), config.train.attention_hidden, config.train.head_dim});
    for (std::size_t ki = 0; ki < config.k_values.size(); ++ki) {
      CellResult cell;
      cell.k = config.k_values[ki];
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].arm == a && tasks[i].k_index == ki) cell.values.push_back(results[i].test_balanced_accuracy);
      }
      cell.summary = summarize(cell.values);
      arm.cells.push_back(std::move(cell));
    }
    report.arms.push_back(std::move(arm));
  }
  report.episodes = std::move(results);
  return report;
}

}  // namespace zsmil

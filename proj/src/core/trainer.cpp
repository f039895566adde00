// SPDX-License-Identifier: Apache-2.0
#include "trainer.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace zsmil {
namespace {

constexpr std::uint64_t kValHoldoutStream = 0x76616c;  // "val"

template <typename T>
void pick_without_replacement(std::vector<T>& items, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(items.size() - i));
    std::swap(items[i], items[j]);
  }
}

struct Gradients {
  AggregatorParams aggregator;
  Matrix W;
  double tau = 0.0;
};

void accumulate(std::span<double> into, std::span<const double> g) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

}  // namespace

EpisodeSelection sample_episode(const Manifest& manifest, std::size_t n_classes, const EpisodeSpec& spec) {
  if (spec.k_shots < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  std::vector<std::vector<ManifestEntry>> pool(n_classes);
  EpisodeSelection sel;
  for (const auto& e : manifest.entries) {
    if (e.label >= n_classes) throw Error(ErrorCode::LabelOutOfRange, e.slide_id);
    if (e.split == Split::TrainPool) pool[e.label].push_back(e);
    if (e.split == Split::Val) sel.val.push_back(e);
  }

  if (sel.val.empty() && spec.val_fraction > 0.0) {
    Rng holdout(mix_seed(spec.base_seed, kValHoldoutStream));
    for (auto& entries : pool) {
      const auto n_val = static_cast<std::size_t>(std::floor(spec.val_fraction * static_cast<double>(entries.size())));
      pick_without_replacement(entries, n_val, holdout);
      sel.val.insert(sel.val.end(), entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(n_val));
      entries.erase(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(n_val));
    }
  }

  sel.seed = mix_seed(spec.base_seed, spec.repeat_index);
  Rng rng(sel.seed);
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& entries = pool[c];
    if (entries.size() < spec.k_shots) {
      throw Error(ErrorCode::InsufficientBags, "class " + std::to_string(c) + " has " +
                                                   std::to_string(entries.size()) + " train_pool bags, need " +
                                                   std::to_string(spec.k_shots));
    }
    pick_without_replacement(entries, spec.k_shots, rng);
    sel.support.insert(sel.support.end(), entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(spec.k_shots));
  }
  std::sort(sel.support.begin(), sel.support.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.slide_id < b.slide_id; });
  return sel;
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (c.epochs < 1) fail("epochs must be >= 1");
  if (!(c.optimizer.learning_rate > 0.0)) fail("learning rate must be > 0");
  if (!(c.tau > 0.0)) fail("tau must be > 0");
  if (c.aggregator == AggregatorKind::ABMIL && c.attention_hidden < 1) fail("attention_hidden must be >= 1");
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["aggregator"] = aggregator_name(c.aggregator);
  j["attention_hidden"] = c.attention_hidden;
  j["head_dim"] = c.head_dim;
  j["init"] = init_name(c.init);
  j["optimizer"] = {{"kind", optimizer_name(c.optimizer.kind)},
                    {"lr", c.optimizer.learning_rate},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.epsilon}};
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["tau"] = c.tau;
  j["learn_tau"] = c.learn_tau;
  j["freeze_head"] = c.freeze_head;
  j["aggregator_seed"] = c.aggregator_seed;
  j["head_seed"] = c.head_seed;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    if (j.contains("aggregator")) {
      const auto kind = parse_aggregator(j.at("aggregator").get<std::string>());
      if (!kind) throw Error(ErrorCode::InvalidArgument, "unknown aggregator " + j.at("aggregator").dump());
      c.aggregator = *kind;
    }
    if (j.contains("init")) {
      const auto kind = parse_init(j.at("init").get<std::string>());
      if (!kind) throw Error(ErrorCode::InvalidArgument, "unknown init " + j.at("init").dump());
      c.init = *kind;
    }
    c.attention_hidden = j.value("attention_hidden", c.attention_hidden);
    c.head_dim = j.value("head_dim", c.head_dim);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      if (o.contains("kind")) {
        const auto kind = parse_optimizer(o.at("kind").get<std::string>());
        if (!kind) throw Error(ErrorCode::InvalidArgument, "unknown optimizer " + o.at("kind").dump());
        c.optimizer.kind = *kind;
      }
      c.optimizer.learning_rate = o.value("lr", c.optimizer.learning_rate);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.epsilon = o.value("eps", c.optimizer.epsilon);
    }
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.tau = j.value("tau", c.tau);
    c.learn_tau = j.value("learn_tau", c.learn_tau);
    c.freeze_head = j.value("freeze_head", c.freeze_head);
    c.aggregator_seed = j.value("aggregator_seed", c.aggregator_seed);
    c.head_seed = j.value("head_seed", c.head_seed);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + ex.what());
  }
  validate(c);
  return c;
}

TrainedModel train(const std::vector<const Bag*>& support, const std::vector<const Bag*>& val,
                   const PrototypeSet& protos, const TrainConfig& config) {
  validate(config);
  if (support.empty()) throw Error(ErrorCode::EmptyList, "support set is empty");
  const std::size_t S = protos.num_classes();
  const std::size_t d = protos.dim();
  for (const Bag* b : support) {
    if (b->features.cols() != d) throw Error(ErrorCode::DimMismatch, b->entry.slide_id);
    if (b->entry.label >= S) throw Error(ErrorCode::LabelOutOfRange, b->entry.slide_id);
  }

  TrainedModel model;
  model.config = config;
  model.class_names = protos.class_names;
  AggregatorDims dims{d, config.attention_hidden, config.head_dim};
  model.aggregator = init_aggregator(config.aggregator, dims, config.aggregator_seed);
  model.head = init_head({config.init, &protos, config.head_seed}, S, d, config.tau, config.learn_tau);

  const bool train_head = !config.freeze_head;
  const bool train_tau = train_head && config.learn_tau;
  Optimizer optimizer(config.optimizer);

  TrainedModel best = model;
  bool have_best = false;
  std::size_t since_best = 0;
  const double inv_b = 1.0 / static_cast<double>(support.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Gradients g{zero_params(model.aggregator.kind, model.aggregator.dims), Matrix(S, d), 0.0};
    double loss_sum = 0.0;
    for (const Bag* bag : support) {
      const auto fwd = aggregator_forward(model.aggregator, bag->features);
      const auto cache = head_forward(model.head, fwd.z);
      const double loss = head_loss(cache, bag->entry.label);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", bag " + bag->entry.slide_id);
      }
      loss_sum += loss;
      const auto hg = head_backward(model.head, cache, bag->entry.label);
      accumulate(g.W.data(), hg.W.data());
      if (hg.tau) g.tau += *hg.tau;
      if (model.aggregator.kind == AggregatorKind::ABMIL ||
          model.aggregator.kind == AggregatorKind::SimpleTransformer) {
        const auto ag = aggregator_backward(model.aggregator, fwd.record, bag->features, hg.z, false);
        auto into = tensors(g.aggregator);
        const auto from = tensors(ag.params);
        for (std::size_t t = 0; t < into.size(); ++t) accumulate(into[t].data, from[t].data);
      }
    }
    model.train_loss.push_back(loss_sum * inv_b);

    std::vector<std::span<double>> params;
    std::vector<std::span<const double>> grads;
    auto agg_grads = tensors(g.aggregator);
    for (auto& t : agg_grads) {
      for (double& v : t.data) v *= inv_b;
    }
    auto agg_params = tensors(model.aggregator);
    for (std::size_t t = 0; t < agg_params.size(); ++t) {
      params.push_back(agg_params[t].data);
      grads.push_back(agg_grads[t].data);
    }
    if (train_head) {
      for (double& v : g.W.data()) v *= inv_b;
      params.push_back(model.head.W.data());
      grads.push_back(g.W.data());
    }
    g.tau *= inv_b;
    if (train_tau) {
      params.push_back({&model.head.tau, 1});
      grads.push_back({&g.tau, 1});
    }
    for (const auto& gr : grads) {
      if (!all_finite(gr)) throw Error(ErrorCode::NonFiniteLoss, "non-finite gradient at epoch " + std::to_string(epoch));
    }
    if (!params.empty()) optimizer.step(params, grads);
    model.head.tau = std::max(model.head.tau, kMinTemperature);
    ++model.aggregator.generation;
    ++model.head.generation;

    if (val.empty()) continue;
    const double metric = evaluate(model, val).balanced_accuracy;
    model.val_metric.push_back(metric);
    if (!have_best || metric > model.best_val) {
      model.best_val = metric;
      model.best_epoch = epoch;
      have_best = true;
      since_best = 0;
      best.aggregator = model.aggregator;
      best.head = model.head;
    } else if (++since_best >= config.patience) {
      break;
    }
  }

  if (val.empty()) {
    model.best_epoch = model.train_loss.size() - 1;
    return model;
  }
  model.aggregator = std::move(best.aggregator);
  model.head = std::move(best.head);
  return model;
}

Evaluation evaluate(const TrainedModel& model, const std::vector<const Bag*>& bags, bool keep_attention) {
  if (bags.empty()) throw Error(ErrorCode::EmptyList, "no bags to evaluate");
  const std::size_t S = model.head.num_classes();
  Evaluation ev;
  ConfusionMatrix cm(S);
  double loss_sum = 0.0;
  for (const Bag* bag : bags) {
    auto fwd = aggregator_forward(model.aggregator, bag->features);
    const auto cache = head_forward(model.head, fwd.z);
    Prediction p;
    p.label = bag->entry.label;
    p.predicted = argmax(cache.probs);
    p.probs = cache.probs;
    if (keep_attention) p.attention = std::move(fwd.attention);
    loss_sum += head_loss(cache, p.label);
    cm.add(p.label, p.predicted);
    ev.predictions.push_back(std::move(p));
  }
  ev.per_class_recall = per_class_recall(cm);
  ev.balanced_accuracy = balanced_accuracy(cm);
  ev.mean_loss = loss_sum / static_cast<double>(bags.size());
  return ev;
}

AttentionExport attention_for_bag(const TrainedModel& model, const Bag& bag) {
  const auto fwd = aggregator_forward(model.aggregator, bag.features);
  const std::size_t N = bag.features.rows();
  AttentionExport exp;
  exp.slide_id = bag.entry.slide_id;
  exp.aggregator = aggregator_name(model.aggregator.kind);
  switch (model.aggregator.kind) {
    case AggregatorKind::BGAP:
      exp.weights.assign(N, 1.0 / static_cast<double>(N));
      exp.note = "uniform weights: average pooling has no learned attention";
      break;
    case AggregatorKind::BGMP: {
      exp.weights.assign(N, 0.0);
      const double share = 1.0 / static_cast<double>(fwd.record.argmax_rows.size());
      for (std::size_t row : fwd.record.argmax_rows) exp.weights[row] += share;
      exp.note = "surrogate: fraction of embedding coordinates for which the patch is the max-pooling argmax";
      break;
    }
    case AggregatorKind::ABMIL:
      exp.weights = *fwd.attention;
      exp.note = "learned gated-attention weights";
      break;
    case AggregatorKind::SimpleTransformer:
      exp.weights = *fwd.attention;
      exp.note = "class-token attention row of the single attention block";
      break;
  }
  return exp;
}

}  // namespace zsmil

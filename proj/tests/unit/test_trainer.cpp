// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "error.hpp"
#include "model_io.hpp"
#include "optimizer.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"
#include "trainer.hpp"

using namespace zsmil;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

Manifest pool_manifest(std::size_t per_class, bool with_val) {
  Manifest m;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      m.entries.push_back({"p" + std::to_string(c) + "_" + std::to_string(100 + i), c, Split::TrainPool, "", 1});
    }
    if (with_val) m.entries.push_back({"v" + std::to_string(c), c, Split::Val, "", 1});
  }
  return m;
}

struct SmallData {
  SyntheticDataset ds;
  std::vector<const Bag*> train, val, test;
};

SmallData small_data(std::uint64_t seed) {
  SyntheticSpec s;
  s.dim = 12;
  s.train_pool_per_class = {4, 4};
  s.val_per_class = {3, 3};
  s.test_per_class = {3, 3};
  s.min_patches = 5;
  s.max_patches = 10;
  s.evidence_fraction = 0.6;
  s.noise_sigma = 0.3;
  s.seed = seed;
  SmallData d{generate_synthetic(s), {}, {}, {}};
  for (const auto& b : d.ds.bags) {
    if (b.entry.split == Split::TrainPool) d.train.push_back(&b);
    if (b.entry.split == Split::Val) d.val.push_back(&b);
    if (b.entry.split == Split::Test) d.test.push_back(&b);
  }
  return d;
}

std::string serialize(const TrainedModel& m, const test::TempDir& dir, const std::string& name) {
  save_model(m, dir / name);
  std::ifstream a(dir / (name + ".zsmodel"), std::ios::binary), b(dir / (name + ".json"));
  return std::string(std::istreambuf_iterator<char>(a), {}) + std::string(std::istreambuf_iterator<char>(b), {});
}

}  // namespace

TEST_CASE("Adam first step moves each parameter by about lr against the gradient sign") {
  Optimizer opt({OptimizerKind::Adam, 0.1});
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{3.0, -0.25, 0.0};
  std::span<double> ps[] = {p};
  std::span<const double> gs[] = {g};
  opt.step(ps, gs);
  // m_hat = g, v_hat = g^2 after bias correction.
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.1 * 0.25 / (0.25 + 1e-8)).epsilon(1e-14));
  CHECK(p[2] == 0.5);
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("Adam second step against a hand-rolled recurrence") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Optimizer opt({OptimizerKind::Adam, lr, b1, b2, eps});
  std::vector<double> p{0.3};
  double m = 0.0, v = 0.0, ref = 0.3;
  for (int t = 1; t <= 5; ++t) {
    const std::vector<double> g{0.5 * t - 1.0};
    std::span<double> ps[] = {p};
    std::span<const double> gs[] = {g};
    opt.step(ps, gs);
    m = b1 * m + (1 - b1) * g[0];
    v = b2 * v + (1 - b2) * g[0] * g[0];
    ref -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    CHECK(p[0] == doctest::Approx(ref).epsilon(1e-13));
  }
}

TEST_CASE("gradient descent step and the vanishing learning-rate limit") {
  Optimizer sgd({OptimizerKind::GradientDescent, 0.5});
  std::vector<double> p{1.0, 2.0};
  const std::vector<double> g{0.2, -0.4};
  std::span<double> ps[] = {p};
  std::span<const double> gs[] = {g};
  sgd.step(ps, gs);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(2.2).epsilon(1e-15));

  for (auto kind : {OptimizerKind::GradientDescent, OptimizerKind::Adam}) {
    const double lr = 1e-12;
    Optimizer opt({kind, lr});
    Rng rng(1);
    std::vector<double> q = test::random_vector(rng, 50), before = q;
    const std::vector<double> grad = test::random_vector(rng, 50, 10.0);
    std::span<double> qs[] = {q};
    std::span<const double> grs[] = {grad};
    opt.step(qs, grs);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double bound = kind == OptimizerKind::Adam ? 1e-12 : 1e-12 * std::abs(grad[i]);
      CHECK(std::abs(q[i] - before[i]) <= bound * (1 + 1e-9) + 4e-16 * std::max(1.0, std::abs(before[i])));
    }
  }
  CHECK(parse_optimizer("adam") == OptimizerKind::Adam);
  CHECK(parse_optimizer("sgd") == OptimizerKind::GradientDescent);
}

TEST_CASE("episode sampling") {
  SUBCASE("pool of exactly k per class is taken whole") {
    const Manifest m = pool_manifest(4, true);
    for (std::uint64_t seed : {1ull, 2ull, 99ull}) {
      const auto sel = sample_episode(m, 2, {4, 0, seed});
      CHECK(sel.support.size() == 8);
      CHECK(sel.val.size() == 2);
    }
  }
  SUBCASE("deterministic and sorted by slide id") {
    const Manifest m = pool_manifest(60, true);
    const auto a = sample_episode(m, 2, {4, 3, 7});
    const auto b = sample_episode(m, 2, {4, 3, 7});
    REQUIRE(a.support.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(a.support[i].slide_id == b.support[i].slide_id);
    for (std::size_t i = 1; i < 8; ++i) CHECK(a.support[i - 1].slide_id < a.support[i].slide_id);
    std::size_t per_class[2] = {0, 0};
    for (const auto& e : a.support) ++per_class[e.label];
    CHECK(per_class[0] == 4);
    CHECK(per_class[1] == 4);
  }
  SUBCASE("five repeats draw at least two distinct support sets") {
    const Manifest m = pool_manifest(60, true);
    std::set<std::vector<std::string>> sets;
    for (std::size_t r = 0; r < 5; ++r) {
      std::vector<std::string> ids;
      for (const auto& e : sample_episode(m, 2, {4, r, 2024}).support) ids.push_back(e.slide_id);
      sets.insert(ids);
    }
    CHECK(sets.size() >= 2);
  }
  SUBCASE("val split from the manifest is fixed across repeats") {
    const Manifest m = pool_manifest(10, true);
    CHECK(sample_episode(m, 2, {2, 0, 1}).val.size() == 2);
    CHECK(sample_episode(m, 2, {2, 4, 1}).val[1].slide_id == "v1");
  }
  SUBCASE("without a val split a fixed fraction of the pool is held out") {
    const Manifest m = pool_manifest(10, false);
    const auto a = sample_episode(m, 2, {4, 0, 5});
    const auto b = sample_episode(m, 2, {4, 1, 5});
    REQUIRE(a.val.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(a.val[i].slide_id == b.val[i].slide_id);
    for (const auto& s : a.support) {
      for (const auto& v : a.val) CHECK(s.slide_id != v.slide_id);
    }
  }
  SUBCASE("insufficient bags") {
    const Manifest m = pool_manifest(3, true);
    CHECK(code_of([&] { sample_episode(m, 2, {4, 0, 1}); }) == ErrorCode::InsufficientBags);
  }
}

TEST_CASE("train config validation and JSON overlay") {
  TrainConfig c;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::Ok);
  c.epochs = 0;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::InvalidArgument);
  c.epochs = 5;
  c.optimizer.learning_rate = 0.0;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::InvalidArgument);

  const TrainConfig base;
  const TrainConfig d =
      train_config_from_json({{"epochs", 7}, {"optimizer", {{"kind", "sgd"}, {"lr", 0.5}}}, {"init", "xavier-normal"}});
  CHECK(d.epochs == 7);
  CHECK(d.optimizer.kind == OptimizerKind::GradientDescent);
  CHECK(d.optimizer.learning_rate == 0.5);
  CHECK(d.init == InitKind::XavierNormal);
  CHECK(d.patience == base.patience);
  const TrainConfig e = train_config_from_json(to_json(d));
  CHECK(to_json(e) == to_json(d));
  CHECK(code_of([] { train_config_from_json({{"aggregator", "rnn"}}); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { train_config_from_json({{"epochs", 0}}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("defaults") {
  const TrainConfig c;
  CHECK(c.optimizer.kind == OptimizerKind::Adam);
  CHECK(c.optimizer.learning_rate == 1e-3);
  CHECK(c.optimizer.beta1 == 0.9);
  CHECK(c.optimizer.beta2 == 0.999);
  CHECK(c.optimizer.epsilon == 1e-8);
  CHECK(c.epochs == 100);
  CHECK(c.patience == 20);
  CHECK(c.tau == 0.07);
}

TEST_CASE("one bag per class with BGAP and zero-shot head: loss goes down") {
  auto d = small_data(3);
  const std::vector<const Bag*> support{d.train[0], d.train[4]};
  TrainConfig c;
  c.aggregator = AggregatorKind::BGAP;
  c.epochs = 30;
  c.optimizer.learning_rate = 0.01;
  const auto m = train(support, {}, d.ds.prototypes, c);
  REQUIRE(m.train_loss.size() == 30);
  CHECK(m.train_loss.back() < m.train_loss.front());
  CHECK(m.best_epoch == 29);
}

TEST_CASE("epochs = 1 gives exactly one step and a trace of length one") {
  auto d = small_data(4);
  TrainConfig c;
  c.epochs = 1;
  const auto m = train(d.train, d.val, d.ds.prototypes, c);
  CHECK(m.train_loss.size() == 1);
  CHECK(m.val_metric.size() == 1);
  CHECK(m.head.generation == 1);
}

TEST_CASE("early stopping keeps the best val epoch") {
  auto d = small_data(5);
  for (auto kind : {AggregatorKind::ABMIL, AggregatorKind::SimpleTransformer, AggregatorKind::BGMP}) {
    TrainConfig c;
    c.aggregator = kind;
    c.attention_hidden = 8;
    c.epochs = 40;
    c.patience = 5;
    c.optimizer.learning_rate = 0.01;
    c.init = InitKind::KaimingUniform;
    c.head_seed = 3;
    c.aggregator_seed = 4;
    const auto m = train(d.train, d.val, d.ds.prototypes, c);
    REQUIRE(!m.val_metric.empty());
    CHECK(m.val_metric.size() <= c.epochs);
    CHECK(m.train_loss.size() == m.val_metric.size());
    const double best = *std::max_element(m.val_metric.begin(), m.val_metric.end());
    CHECK(m.best_val == best);
    CHECK(m.val_metric[m.best_epoch] == best);
    for (std::size_t e = 0; e < m.best_epoch; ++e) CHECK(m.val_metric[e] < best);
    CHECK(m.val_metric.size() <= m.best_epoch + 1 + c.patience);
    CHECK(evaluate(m, d.val).balanced_accuracy == best);
    for (double l : m.train_loss) CHECK(std::isfinite(l));
  }
}

TEST_CASE("training is bitwise reproducible") {
  auto d = small_data(6);
  test::TempDir dir("train");
  TrainConfig c;
  c.attention_hidden = 8;
  c.epochs = 15;
  c.init = InitKind::XavierNormal;
  c.head_seed = 11;
  c.aggregator_seed = 12;
  const auto a = train(d.train, d.val, d.ds.prototypes, c);
  const auto b = train(d.train, d.val, d.ds.prototypes, c);
  CHECK(serialize(a, dir, "a") == serialize(b, dir, "b"));
}

TEST_CASE("frozen head keeps the prototypes") {
  auto d = small_data(7);
  TrainConfig c;
  c.attention_hidden = 8;
  c.epochs = 5;
  c.freeze_head = true;
  c.optimizer.learning_rate = 0.05;
  const auto m = train(d.train, d.val, d.ds.prototypes, c);
  CHECK(m.head.W == d.ds.prototypes.weights);
}

TEST_CASE("learned temperature moves and stays above the floor") {
  auto d = small_data(8);
  TrainConfig c;
  c.aggregator = AggregatorKind::BGAP;
  c.epochs = 20;
  c.learn_tau = true;
  c.optimizer.learning_rate = 0.05;
  const auto m = train(d.train, {}, d.ds.prototypes, c);
  CHECK(m.head.tau != 0.07);
  CHECK(m.head.tau >= kMinTemperature);
}

TEST_CASE("constant predictor scores 1/S balanced accuracy") {
  auto d = small_data(9);
  TrainConfig c;
  c.aggregator = AggregatorKind::BGAP;
  c.epochs = 1;
  c.freeze_head = true;
  auto m = train(d.train, {}, d.ds.prototypes, c);
  // Both classes share one direction: every bag ties and goes to class 0.
  for (std::size_t j = 0; j < m.head.W.cols(); ++j) m.head.W(1, j) = m.head.W(0, j);
  const auto ev = evaluate(m, d.test);
  CHECK(ev.balanced_accuracy == 0.5);
  for (const auto& p : ev.predictions) CHECK(p.predicted == 0);
}

TEST_CASE("train and evaluate reject bad inputs") {
  auto d = small_data(10);
  TrainConfig c;
  CHECK(code_of([&] { train({}, d.val, d.ds.prototypes, c); }) == ErrorCode::EmptyList);
  CHECK(code_of([&] { evaluate(TrainedModel{}, {}); }) == ErrorCode::EmptyList);
  Bag wrong = *d.train[0];
  wrong.features = Matrix(3, 5, 0.2);
  CHECK(code_of([&] { train({&wrong}, {}, d.ds.prototypes, c); }) == ErrorCode::DimMismatch);
}

TEST_CASE("attention export per aggregator") {
  auto d = small_data(11);
  const Bag& bag = *d.test[0];
  const std::size_t N = bag.features.rows();
  for (auto kind : {AggregatorKind::BGAP, AggregatorKind::BGMP, AggregatorKind::ABMIL, AggregatorKind::SimpleTransformer}) {
    TrainConfig c;
    c.aggregator = kind;
    c.attention_hidden = 8;
    c.epochs = 2;
    const auto m = train(d.train, {}, d.ds.prototypes, c);
    const auto exp = attention_for_bag(m, bag);
    REQUIRE(exp.weights.size() == N);
    double s = 0.0;
    for (double w : exp.weights) {
      CHECK(w >= 0.0);
      s += w;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    if (kind == AggregatorKind::BGAP) CHECK(exp.weights[0] == 1.0 / static_cast<double>(N));
    if (kind == AggregatorKind::ABMIL || kind == AggregatorKind::SimpleTransformer) {
      // A one-bag list would leave a class empty; evaluate the whole split.
      const auto ev = evaluate(m, d.test, true);
      CHECK(*ev.predictions[0].attention == exp.weights);
    }
  }
}

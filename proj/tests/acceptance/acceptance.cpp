// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, with timings.
// Exit status is nonzero if any criterion fails.
//
//   zsmil_acceptance [--only <name>]...

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "aggregators.hpp"
#include "data_io.hpp"
#include "error.hpp"
#include "head.hpp"
#include "metrics.hpp"
#include "protocol.hpp"
#include "prototypes.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"
#include "zeroshot.hpp"

using namespace zsmil;
namespace fs = std::filesystem;

namespace {

// Dataset and protocol seeds for the synthetic replications.
constexpr std::uint64_t kDatasetSeed = 1;
constexpr std::uint64_t kProtocolSeed = 1;

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------- gradients

double full_loss(const AggregatorParams& agg, const HeadParams& head, const Matrix& bag, std::size_t y) {
  const auto f = aggregator_forward(agg, bag);
  return head_loss(head_forward(head, f.z), y);
}

// Max elementwise relative error (floor 1e-5) and max per-tensor normwise
// relative error between analytic and central-difference gradients of the
// end-to-end loss (aggregator -> head -> loss). Both use a 1e-5 floor so
// exactly-zero gradients (e.g. attention logits of a one-patch bag) compare
// against finite-difference noise sensibly.
struct GradCheck {
  double elementwise = 0.0;
  double normwise = 0.0;
};

GradCheck check_instance(AggregatorKind kind, Rng& rng, bool learn_tau) {
  const std::size_t N = 1 + rng.below(8);
  const std::size_t d = 2 + rng.below(15);
  const std::size_t S = 2 + rng.below(2);
  AggregatorDims dims{d, 1 + rng.below(8), 1 + rng.below(d)};
  AggregatorParams agg = init_aggregator(kind, dims, rng.next_u64());
  for (auto& t : tensors(agg)) {
    for (double& v : t.data) v = 0.5 * rng.normal();
  }
  HeadParams head;
  head.W = test::random_matrix(rng, S, d);
  head.tau = 0.07 + rng.uniform(0.0, 0.5);
  head.learn_tau = learn_tau;
  Matrix bag = test::random_matrix(rng, N, d);
  if (kind == AggregatorKind::BGMP) {
    // Keep coordinates away from ties: spread each column's values.
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<std::size_t> order(N);
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      for (std::size_t n = 0; n < N; ++n) bag(order[n], j) = 0.1 * static_cast<double>(n) + 0.01 * rng.uniform();
    }
  }
  const std::size_t y = rng.below(S);

  const auto fwd = aggregator_forward(agg, bag);
  const auto cache = head_forward(head, fwd.z);
  const auto hg = head_backward(head, cache, y);
  const auto ag = aggregator_backward(agg, fwd.record, bag, hg.z, true);

  auto f = [&] { return full_loss(agg, head, bag, y); };
  GradCheck out;
  auto compare = [&](std::span<double> values, std::span<const double> analytic) {
    double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double fd = test::central_difference(f, values[i], 1e-6);
      out.elementwise = std::max(out.elementwise, test::relative_error(analytic[i], fd));
      diff2 += (analytic[i] - fd) * (analytic[i] - fd);
      a2 += analytic[i] * analytic[i];
      f2 += fd * fd;
    }
    const double scale = std::max({std::sqrt(a2), std::sqrt(f2), 1e-5});
    out.normwise = std::max(out.normwise, std::sqrt(diff2) / scale);
  };
  auto params = tensors(agg);
  const auto grads = tensors(ag.params);
  for (std::size_t t = 0; t < params.size(); ++t) compare(params[t].data, grads[t].data);
  compare(head.W.data(), hg.W.data());
  compare(bag.data(), ag.bag.data());
  if (learn_tau) {
    const double g = *hg.tau;
    compare({&head.tau, 1}, {&g, 1});
  }
  return out;
}

Outcome gradient_suite() {
  Outcome o;
  Rng rng(20240611);
  std::ostringstream detail;
  struct Case {
    const char* label;
    AggregatorKind kind;
    bool learn_tau;
  };
  for (const Case c : {Case{"ABMIL", AggregatorKind::ABMIL, false}, Case{"SIMPLE_TRANSFORMER", AggregatorKind::SimpleTransformer, false},
                       Case{"head+tau", AggregatorKind::BGAP, true}, Case{"BGMP", AggregatorKind::BGMP, true}}) {
    GradCheck worst;
    const int instances = 25;
    for (int i = 0; i < instances; ++i) {
      const GradCheck g = check_instance(c.kind, rng, c.learn_tau);
      worst.elementwise = std::max(worst.elementwise, g.elementwise);
      worst.normwise = std::max(worst.normwise, g.normwise);
    }
    const bool ok = worst.elementwise < 1e-4 && worst.normwise < 1e-4;
    o.pass &= ok;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s%s n=%d max_rel=%.2e normwise=%.2e", detail.str().empty() ? "" : "; ", c.label,
                  instances, worst.elementwise, worst.normwise);
    detail << buf;
  }
  o.detail = detail.str();
  return o;
}

// ------------------------------------------------------- zero-shot equivalence

Outcome zero_shot_equivalence() {
  SyntheticSpec spec;
  spec.seed = 200;
  spec.train_pool_per_class = {60, 40};
  spec.val_per_class = {25, 25};
  spec.test_per_class = {25, 25};
  const auto ds = generate_synthetic(spec);
  const auto bgap = init_aggregator(AggregatorKind::BGAP, {spec.dim}, 0);
  const HeadParams head = init_head({InitKind::ZeroShot, &ds.prototypes, 0}, 2, spec.dim);
  std::size_t checked = 0, agree = 0, skipped = 0;
  for (const auto& bag : ds.bags) {
    const Vector scores = zero_shot_scores(bag.features, ds.prototypes);
    Vector sorted = scores;
    std::sort(sorted.rbegin(), sorted.rend());
    if (sorted[0] - sorted[1] <= 1e-9) {
      ++skipped;
      continue;
    }
    ++checked;
    const auto logits = head_forward(head, aggregator_forward(bgap, bag.features).z).logits;
    agree += argmax(scores) == argmax(logits);
  }
  Outcome o;
  o.pass = ds.bags.size() == 200 && checked > 0 && agree == checked;
  o.detail = std::to_string(agree) + "/" + std::to_string(checked) + " bags agree (" + std::to_string(skipped) +
             " within 1e-9 gap skipped, " + std::to_string(ds.bags.size()) + " bags)";
  return o;
}

// ----------------------------------------------------- synthetic replications

struct DefaultData {
  test::TempDir dir{"acceptance"};
  Manifest manifest;
  PrototypeSet protos;
  DefaultData() {
    SyntheticSpec spec;  // default dataset
    spec.seed = kDatasetSeed;
    write_synthetic(spec, dir.path());
    manifest = load_manifest(dir / "manifest.jsonl", spec.n_classes);
    protos = load_prototypes(dir / "prototypes");
  }
};

const CellResult& cell(const ArmResult& arm, std::size_t k) {
  for (const auto& c : arm.cells) {
    if (c.k == k) return c;
  }
  throw Error(ErrorCode::NotFound, "no cell for k=" + std::to_string(k));
}

std::string cell_text(const CellResult& c) {
  return format_percent(c.summary.mean) + "±" + format_percent(c.summary.std);
}

Outcome init_ablation() {
  DefaultData data;
  ProtocolConfig cfg;
  cfg.arms = init_ablation_arms();
  cfg.seed = kProtocolSeed;
  const RunReport r = run_protocol(data.manifest, data.protos, cfg);
  const ArmResult* zs = nullptr;
  std::vector<const ArmResult*> random;
  for (const auto& a : r.arms) (a.init == "zeroshot" ? zs : random.emplace_back(&a)) = &a;
  Outcome o;
  std::ostringstream d;
  d << "ZS " << cell_text(cell(*zs, 4)) << " / " << cell_text(cell(*zs, 16));
  double max_std4 = 0.0;
  for (const ArmResult* a : random) {
    for (std::size_t k : {4, 16}) {
      if (cell(*zs, k).summary.mean < cell(*a, k).summary.mean) {
        o.pass = false;
        d << "; (a) fails vs " << a->label << " at k=" << k;
      }
    }
    max_std4 = std::max(max_std4, cell(*a, 4).summary.std);
    d << "; " << a->label << " " << cell_text(cell(*a, 4)) << " / " << cell_text(cell(*a, 16));
  }
  if (cell(*zs, 4).summary.std > max_std4) {
    o.pass = false;
    d << "; (b) ZS std above max random std at k=4";
  }
  d << "; zero-shot " << format_percent(r.zero_shot.balanced_accuracy);
  o.detail = d.str();
  return o;
}

Outcome aggregator_ablation() {
  DefaultData data;
  ProtocolConfig cfg;
  cfg.arms = aggregator_ablation_arms();
  cfg.seed = kProtocolSeed;
  const RunReport r = run_protocol(data.manifest, data.protos, cfg);
  const ArmResult* abmil = nullptr;
  const ArmResult* transformer = nullptr;
  std::ostringstream d;
  for (const auto& a : r.arms) {
    if (a.aggregator == "ABMIL") abmil = &a;
    if (a.aggregator == "SIMPLE_TRANSFORMER") transformer = &a;
    d << (d.str().empty() ? "" : "; ") << a.label << " " << cell_text(cell(a, 4)) << " / " << cell_text(cell(a, 16));
  }
  Outcome o;
  o.pass = cell(*transformer, 4).summary.mean < cell(*abmil, 4).summary.mean;
  o.detail = d.str();
  return o;
}

// ------------------------------------------------------------- invariants

Outcome invariants() {
  Rng rng(777);
  Outcome o;
  std::vector<std::string> failed;
  auto require = [&](bool ok, const char* what) {
    if (!ok && std::find(failed.begin(), failed.end(), what) == failed.end()) failed.push_back(what);
  };

  // Softmax normalization and shift invariance.
  for (int t = 0; t < 200; ++t) {
    const Vector x = test::random_vector(rng, 1 + rng.below(30), 10.0);
    Vector y = x;
    const double c = rng.uniform(-100, 100);
    for (double& v : y) v += c;
    const Vector p = softmax(x), q = softmax(y);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      s += p[i];
      require(std::abs(p[i] - q[i]) < 1e-12, "softmax shift");
    }
    require(std::abs(s - 1.0) < 1e-12, "softmax sum");
  }

  // Attention sums to one; permutation invariance of every aggregator.
  for (auto kind : {AggregatorKind::BGAP, AggregatorKind::BGMP, AggregatorKind::ABMIL, AggregatorKind::SimpleTransformer}) {
    for (int t = 0; t < 50; ++t) {
      const std::size_t N = 1 + rng.below(20), d = 2 + rng.below(30);
      AggregatorParams p = init_aggregator(kind, {d, 16, std::min<std::size_t>(d, 8)}, rng.next_u64());
      for (auto& tv : tensors(p)) {
        for (double& v : tv.data) v += 0.3 * rng.normal();
      }
      const Matrix bag = test::random_matrix(rng, N, d);
      std::vector<std::size_t> perm(N);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = N; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      Matrix shuffled(N, d);
      for (std::size_t n = 0; n < N; ++n) {
        std::copy(bag.row(perm[n]).begin(), bag.row(perm[n]).end(), shuffled.row(n).begin());
      }
      const auto a = aggregator_forward(p, bag);
      const auto b = aggregator_forward(p, shuffled);
      for (std::size_t j = 0; j < d; ++j) require(std::abs(a.z[j] - b.z[j]) < 1e-9, "permutation invariance");
      if (a.attention) {
        double s = 0.0;
        for (double w : *a.attention) {
          s += w;
          require(w >= 0.0, "attention nonnegative");
        }
        require(std::abs(s - 1.0) < 1e-12, "attention sum");
        for (std::size_t n = 0; n < N; ++n) {
          require(std::abs((*b.attention)[n] - (*a.attention)[perm[n]]) < 1e-9, "attention equivariance");
        }
      }
    }
  }

  // Prototype scale invariance: rescaled patches, rescaled head rows and
  // rescaled prompt templates leave scores and logits unchanged.
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 4 + rng.below(30), S = 2 + rng.below(2);
    std::vector<TemplateEmbeddings> templates, scaled_templates;
    for (std::size_t c = 0; c < S; ++c) {
      TemplateEmbeddings te{"c" + std::to_string(c), test::random_matrix(rng, 1 + rng.below(5), d)};
      TemplateEmbeddings ts = te;
      for (std::size_t r = 0; r < ts.vectors.rows(); ++r) {
        const double f = std::exp(rng.uniform(-5, 5));
        for (double& v : ts.vectors.row(r)) v *= f;
      }
      templates.push_back(te);
      scaled_templates.push_back(ts);
    }
    const PrototypeSet protos = ensemble(templates);
    const PrototypeSet protos_scaled = ensemble(scaled_templates);
    const Matrix bag = test::random_matrix(rng, 1 + rng.below(15), d);
    Matrix bag_scaled = bag;
    const double s = std::exp(rng.uniform(-5, 5));
    for (double& v : bag_scaled.data()) v *= s;
    const Vector a = zero_shot_scores(bag, protos);
    const Vector b = zero_shot_scores(bag_scaled, protos_scaled);
    for (std::size_t c = 0; c < S; ++c) require(std::abs(a[c] - b[c]) < 1e-9, "zero-shot scale invariance");

    HeadParams h = init_head({InitKind::ZeroShot, &protos, 0}, S, d);
    HeadParams hs = h;
    for (std::size_t c = 0; c < S; ++c) {
      const double f = std::exp(rng.uniform(-5, 5));
      for (double& v : hs.W.row(c)) v *= f;
    }
    const Vector z = test::random_unit(rng, d);
    const auto la = head_forward(h, z).logits;
    const auto lb = head_forward(hs, z).logits;
    for (std::size_t c = 0; c < S; ++c) require(std::abs(la[c] - lb[c]) < 1e-9, "head row scale invariance");
  }

  // Balanced accuracy on 50 random confusion matrices vs a brute-force loop.
  for (int t = 0; t < 50; ++t) {
    const std::size_t S = 2 + rng.below(5);
    std::vector<std::size_t> truth, pred;
    for (std::size_t c = 0; c < S; ++c) {
      const std::size_t n = 1 + rng.below(40);
      for (std::size_t i = 0; i < n; ++i) {
        truth.push_back(c);
        pred.push_back(rng.below(S));
      }
    }
    const auto cm = ConfusionMatrix::from_predictions(S, truth, pred);
    double sum = 0.0;
    for (std::size_t c = 0; c < S; ++c) {
      double hit = 0.0, total = 0.0;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] != c) continue;
        total += 1.0;
        hit += pred[i] == c ? 1.0 : 0.0;
      }
      sum += hit / total;
    }
    require(std::abs(balanced_accuracy(cm) - sum / static_cast<double>(S)) < 1e-12, "balanced accuracy oracle");
  }

  o.pass = failed.empty();
  if (o.pass) {
    o.detail = "softmax, attention, permutation (1e-9), scale, 50 confusion matrices";
  } else {
    for (const auto& f : failed) o.detail += (o.detail.empty() ? "failed: " : ", ") + f;
  }
  return o;
}

// ------------------------------------------------------------ determinism

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ZSMIL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome determinism() {
  test::TempDir dir("determinism");
  Outcome o;
  const std::string data = (dir / "data").string();
  if (run_cli("synth --seed 5 --train-pool 20 --val 8 --test 8 --min-patches 16 --max-patches 32 --out " + data) != 0) {
    return {false, "synth failed"};
  }
  const std::string flags = " --manifest " + data + "/manifest.jsonl --protos " + data +
                            "/prototypes --seed 11 --k 4 --repeats 2 --epochs 30";
  const std::string a = (dir / "a").string(), b = (dir / "b").string(), c = (dir / "c").string();
  if (run_cli("ablate-init" + flags + " --out " + a) != 0 || run_cli("ablate-init" + flags + " --out " + b) != 0 ||
      run_cli("ablate-init" + flags + " --jobs 3 --out " + c) != 0) {
    return {false, "ablate-init failed"};
  }
  const std::string ja = slurp(a + "/report.json");
  o.pass = !ja.empty() && ja == slurp(b + "/report.json") && ja == slurp(c + "/report.json");
  o.detail = o.pass ? "two identical runs and a 3-thread run produced byte-identical report.json (" +
                          std::to_string(ja.size()) + " bytes)"
                    : "report.json differs between runs";
  return o;
}

// ----------------------------------------------------- format conformance

std::string header_bytes(const char* magic, std::uint16_t version, std::uint8_t dtype, std::uint64_t rows,
                         std::uint64_t cols) {
  std::string s(magic, 4);
  auto put = [&](std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put(version, 2);
  put(dtype, 1);
  put(rows, 8);
  put(cols, 8);
  return s;
}

std::string float_bytes(std::vector<float> v) {
  std::string s;
  for (float f : v) {
    char b[4];
    std::memcpy(b, &f, 4);
    s.append(b, 4);  // little-endian host
  }
  return s;
}

Outcome format_conformance() {
  test::TempDir dir("format");
  Rng rng(1000);
  Outcome o;
  std::size_t exact = 0;
  const auto path = dir / "m.zsml";
  for (int t = 0; t < 1000; ++t) {
    const std::size_t rows = rng.below(12), cols = 1 + rng.below(12);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal() * std::exp(rng.uniform(-30, 30));
    write_embeddings(m, path);
    const Matrix back = read_embeddings(path);
    bool ok = back.rows() == rows && back.cols() == cols;
    for (std::size_t i = 0; ok && i < m.size(); ++i) {
      ok = back.data()[i] == static_cast<double>(static_cast<float>(m.data()[i]));
    }
    exact += ok;
  }
  struct Fixture {
    const char* name;
    std::string bytes;
    ErrorCode expected;
  };
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const float inf = std::numeric_limits<float>::infinity();
  const Fixture fixtures[] = {
      {"bad magic", header_bytes("XXXX", 1, 0, 1, 1) + float_bytes({1.0f}), ErrorCode::BadMagic},
      {"version 2", header_bytes("ZSML", 2, 0, 1, 1) + float_bytes({1.0f}), ErrorCode::UnsupportedVersion},
      {"version 0", header_bytes("ZSML", 0, 0, 1, 1) + float_bytes({1.0f}), ErrorCode::UnsupportedVersion},
      {"short payload", header_bytes("ZSML", 1, 0, 2, 2) + float_bytes({1.0f, 2.0f, 3.0f}), ErrorCode::TruncatedPayload},
      {"short header", header_bytes("ZSML", 1, 0, 1, 1).substr(0, 12), ErrorCode::TruncatedPayload},
      {"empty file", "", ErrorCode::TruncatedPayload},
      {"NaN value", header_bytes("ZSML", 1, 0, 1, 2) + float_bytes({0.0f, nan}), ErrorCode::NonFiniteValue},
      {"Inf value", header_bytes("ZSML", 1, 0, 1, 1) + float_bytes({-inf}), ErrorCode::NonFiniteValue},
  };
  std::size_t fixture_ok = 0;
  std::string bad;
  for (const auto& f : fixtures) {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << f.bytes;
    ErrorCode got = ErrorCode::Ok;
    try {
      read_embeddings(path);
    } catch (const Error& e) {
      got = e.code();
    }
    if (got == f.expected) {
      ++fixture_ok;
    } else {
      bad += std::string(bad.empty() ? "" : ", ") + f.name + " -> " + error_name(got);
    }
  }
  const std::size_t n_fixtures = sizeof fixtures / sizeof fixtures[0];
  o.pass = exact == 1000 && fixture_ok == n_fixtures;
  o.detail = std::to_string(exact) + "/1000 round-trips exact; " + std::to_string(fixture_ok) + "/" +
             std::to_string(n_fixtures) + " malformed fixtures raised the expected error";
  if (!bad.empty()) o.detail += " (" + bad + ")";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> only;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::string(argv[i]) == "--only") only.push_back(argv[i + 1]);
  }
  const Criterion criteria[] = {
      {"gradient-suite", 30.0, gradient_suite},
      {"zero-shot-equivalence", 5.0, zero_shot_equivalence},
      {"init-ablation-ordering", 180.0, init_ablation},
      {"aggregator-ablation-sign", 180.0, aggregator_ablation},
      {"invariant-suite", 0.0, invariants},
      {"determinism", 0.0, determinism},
      {"format-conformance", 0.0, format_conformance},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = test::seconds_since(t0);
    std::string timing = fmt("%.2fs", secs);
    if (c.budget_seconds > 0.0) {
      timing += fmt(" (budget %.0fs)", c.budget_seconds);
      if (secs >= c.budget_seconds) {
        o.pass = false;
        o.detail += "; over time budget";
      }
    }
    if (!o.pass) ++failures;
    std::printf("%s %-24s %s  %s\n", o.pass ? "PASS" : "FAIL", c.name, timing.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

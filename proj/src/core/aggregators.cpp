// SPDX-License-Identifier: Apache-2.0
#include "aggregators.hpp"

#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace zsmil {
namespace {

void xavier_uniform(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

// out[j] += x[i] * W[i][j] for W of shape len(x) x len(out).
void accumulate_row_times(std::span<const double> x, const Matrix& w, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const auto wr = w.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += xi * wr[j];
  }
}

// G[i][j] += a[i] * b[j]
void add_outer(Matrix& g, std::span<const double> a, std::span<const double> b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = a[i];
    auto gr = g.row(i);
    for (std::size_t j = 0; j < b.size(); ++j) gr[j] += ai * b[j];
  }
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct LayerNormOut {
  Vector hat;
  double inv_std;
  Vector out;
};

LayerNormOut layer_norm(std::span<const double> x, const Vector& gamma, const Vector& beta) {
  const std::size_t d = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  LayerNormOut r{Vector(d), 1.0 / std::sqrt(var + kLayerNormEps), Vector(d)};
  for (std::size_t j = 0; j < d; ++j) {
    r.hat[j] = (x[j] - mean) * r.inv_std;
    r.out[j] = gamma[j] * r.hat[j] + beta[j];
  }
  return r;
}

// Accumulates gamma/beta gradients and returns the gradient w.r.t. the LN input.
Vector layer_norm_backward(std::span<const double> hat, double inv_std, std::span<const double> grad_out,
                           const Vector& gamma, Vector& grad_gamma, Vector& grad_beta) {
  const std::size_t d = hat.size();
  Vector g_hat(d);
  double mean_g = 0.0;
  double mean_gh = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    grad_gamma[j] += grad_out[j] * hat[j];
    grad_beta[j] += grad_out[j];
    g_hat[j] = grad_out[j] * gamma[j];
    mean_g += g_hat[j];
    mean_gh += g_hat[j] * hat[j];
  }
  mean_g /= static_cast<double>(d);
  mean_gh /= static_cast<double>(d);
  Vector gx(d);
  for (std::size_t j = 0; j < d; ++j) gx[j] = inv_std * (g_hat[j] - mean_g - hat[j] * mean_gh);
  return gx;
}

void finish(ForwardResult& r) {
  r.z = l2_normalize(r.record.pooled);
  r.record.z = r.z;
}

}  // namespace

const char* aggregator_name(AggregatorKind kind) noexcept {
  switch (kind) {
    case AggregatorKind::BGAP: return "BGAP";
    case AggregatorKind::BGMP: return "BGMP";
    case AggregatorKind::ABMIL: return "ABMIL";
    case AggregatorKind::SimpleTransformer: return "SIMPLE_TRANSFORMER";
  }
  return "?";
}

const char* aggregator_flag(AggregatorKind kind) noexcept {
  switch (kind) {
    case AggregatorKind::BGAP: return "bgap";
    case AggregatorKind::BGMP: return "bgmp";
    case AggregatorKind::ABMIL: return "abmil";
    case AggregatorKind::SimpleTransformer: return "transformer";
  }
  return "?";
}

std::optional<AggregatorKind> parse_aggregator(std::string_view s) noexcept {
  for (auto k : {AggregatorKind::BGAP, AggregatorKind::BGMP, AggregatorKind::ABMIL,
                 AggregatorKind::SimpleTransformer}) {
    if (s == aggregator_name(k) || s == aggregator_flag(k)) return k;
  }
  return std::nullopt;
}

std::vector<TensorView> tensors(AggregatorParams& p) {
  std::vector<TensorView> out;
  if (auto* a = std::get_if<AbmilParams>(&p.values)) {
    out.push_back({"V", a->V.data(), a->V.rows(), a->V.cols()});
    out.push_back({"U", a->U.data(), a->U.rows(), a->U.cols()});
    out.push_back({"w", a->w, 1, a->w.size()});
  } else if (auto* t = std::get_if<TransformerParams>(&p.values)) {
    out.push_back({"Wq", t->Wq.data(), t->Wq.rows(), t->Wq.cols()});
    out.push_back({"Wk", t->Wk.data(), t->Wk.rows(), t->Wk.cols()});
    out.push_back({"Wv", t->Wv.data(), t->Wv.rows(), t->Wv.cols()});
    out.push_back({"Wo", t->Wo.data(), t->Wo.rows(), t->Wo.cols()});
    out.push_back({"cls", t->cls, 1, t->cls.size()});
    out.push_back({"ln_gamma", t->ln_gamma, 1, t->ln_gamma.size()});
    out.push_back({"ln_beta", t->ln_beta, 1, t->ln_beta.size()});
  }
  return out;
}

std::vector<ConstTensorView> tensors(const AggregatorParams& p) {
  std::vector<ConstTensorView> out;
  for (const auto& t : tensors(const_cast<AggregatorParams&>(p))) out.push_back({t.name, t.data, t.rows, t.cols});
  return out;
}

AggregatorParams zero_params(AggregatorKind kind, const AggregatorDims& dims) {
  if (dims.dim == 0) throw Error(ErrorCode::InvalidArgument, "aggregator dim must be >= 1");
  AggregatorParams p;
  p.kind = kind;
  p.dims = dims;
  const std::size_t d = dims.dim;
  switch (kind) {
    case AggregatorKind::BGAP:
    case AggregatorKind::BGMP:
      break;
    case AggregatorKind::ABMIL: {
      const std::size_t h = dims.attention_hidden;
      if (h == 0) throw Error(ErrorCode::InvalidArgument, "attention hidden size must be >= 1");
      p.values = AbmilParams{Matrix(h, d), Matrix(h, d), Vector(h, 0.0)};
      break;
    }
    case AggregatorKind::SimpleTransformer: {
      const std::size_t dh = dims.effective_head_dim();
      if (dh > d) throw Error(ErrorCode::InvalidArgument, "head_dim must be <= dim");
      if (d < 2) throw Error(ErrorCode::InvalidArgument, "layer norm needs dim >= 2");
      p.values = TransformerParams{Matrix(d, dh), Matrix(d, dh), Matrix(d, dh), Matrix(dh, d),
                                   Vector(d, 0.0),  Vector(d, 0.0), Vector(d, 0.0)};
      break;
    }
  }
  return p;
}

AggregatorParams init_aggregator(AggregatorKind kind, const AggregatorDims& dims, std::uint64_t seed) {
  AggregatorParams p = zero_params(kind, dims);
  Rng rng(seed);
  const std::size_t d = dims.dim;
  if (auto* a = std::get_if<AbmilParams>(&p.values)) {
    xavier_uniform(a->V, d, dims.attention_hidden, rng);
    xavier_uniform(a->U, d, dims.attention_hidden, rng);
  } else if (auto* t = std::get_if<TransformerParams>(&p.values)) {
    const std::size_t dh = dims.effective_head_dim();
    xavier_uniform(t->Wq, d, dh, rng);
    xavier_uniform(t->Wk, d, dh, rng);
    xavier_uniform(t->Wv, d, dh, rng);
    xavier_uniform(t->Wo, dh, d, rng);
    std::fill(t->ln_gamma.begin(), t->ln_gamma.end(), 1.0);
  }
  return p;
}

std::size_t param_count(AggregatorKind kind, const AggregatorDims& dims) {
  const std::size_t d = dims.dim;
  switch (kind) {
    case AggregatorKind::BGAP:
    case AggregatorKind::BGMP:
      return 0;
    case AggregatorKind::ABMIL:
      return 2 * dims.attention_hidden * d + dims.attention_hidden;
    case AggregatorKind::SimpleTransformer: {
      const std::size_t dh = dims.effective_head_dim();
      return 3 * d * dh + dh * d + 3 * d;
    }
  }
  return 0;
}

ForwardResult aggregator_forward(const AggregatorParams& params, const Matrix& bag) {
  const std::size_t N = bag.rows();
  const std::size_t d = bag.cols();
  if (N == 0) throw Error(ErrorCode::EmptyBag, "bag has no patches");
  if (d != params.dims.dim) {
    throw Error(ErrorCode::ShapeMismatch, "bag dim " + std::to_string(d) + " vs aggregator dim " +
                                              std::to_string(params.dims.dim));
  }
  ForwardResult r;
  BagForwardRecord& rec = r.record;
  rec.kind = params.kind;
  rec.generation = params.generation;
  rec.n = N;
  rec.d = d;
  rec.pooled.assign(d, 0.0);

  switch (params.kind) {
    case AggregatorKind::BGAP: {
      for (std::size_t n = 0; n < N; ++n) {
        const auto x = bag.row(n);
        for (std::size_t j = 0; j < d; ++j) rec.pooled[j] += x[j];
      }
      for (double& v : rec.pooled) v /= static_cast<double>(N);
      break;
    }
    case AggregatorKind::BGMP: {
      rec.argmax_rows.assign(d, 0);
      const auto first = bag.row(0);
      std::copy(first.begin(), first.end(), rec.pooled.begin());
      for (std::size_t n = 1; n < N; ++n) {
        const auto x = bag.row(n);
        for (std::size_t j = 0; j < d; ++j) {
          if (x[j] > rec.pooled[j]) {
            rec.pooled[j] = x[j];
            rec.argmax_rows[j] = n;
          }
        }
      }
      break;
    }
    case AggregatorKind::ABMIL: {
      const auto& a = params.abmil();
      const std::size_t H = params.dims.attention_hidden;
      const Matrix Vt = transpose(a.V);
      const Matrix Ut = transpose(a.U);
      rec.tanh_act = Matrix(N, H);
      rec.sigmoid_act = Matrix(N, H);
      Vector logits(N);
      for (std::size_t n = 0; n < N; ++n) {
        auto th = rec.tanh_act.row(n);
        auto sg = rec.sigmoid_act.row(n);
        accumulate_row_times(bag.row(n), Vt, th);
        accumulate_row_times(bag.row(n), Ut, sg);
        double e = 0.0;
        for (std::size_t h = 0; h < H; ++h) {
          th[h] = std::tanh(th[h]);
          sg[h] = sigmoid(sg[h]);
          e += a.w[h] * th[h] * sg[h];
        }
        logits[n] = e;
      }
      rec.attention = softmax(logits);
      for (std::size_t n = 0; n < N; ++n) {
        const auto x = bag.row(n);
        const double an = rec.attention[n];
        for (std::size_t j = 0; j < d; ++j) rec.pooled[j] += an * x[j];
      }
      r.attention = rec.attention;
      break;
    }
    case AggregatorKind::SimpleTransformer: {
      const auto& t = params.transformer();
      const std::size_t dh = params.dims.effective_head_dim();
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

      auto cls_ln = layer_norm(t.cls, t.ln_gamma, t.ln_beta);
      rec.cls_hat = std::move(cls_ln.hat);
      rec.cls_inv_std = cls_ln.inv_std;
      rec.cls_ln = std::move(cls_ln.out);
      rec.query.assign(dh, 0.0);
      accumulate_row_times(rec.cls_ln, t.Wq, rec.query);

      rec.ln_hat = Matrix(N, d);
      rec.ln_out = Matrix(N, d);
      rec.ln_inv_std.assign(N, 0.0);
      rec.keys = Matrix(N, dh);
      rec.values = Matrix(N, dh);
      Vector scores(N);
      for (std::size_t n = 0; n < N; ++n) {
        auto ln = layer_norm(bag.row(n), t.ln_gamma, t.ln_beta);
        std::copy(ln.hat.begin(), ln.hat.end(), rec.ln_hat.row(n).begin());
        std::copy(ln.out.begin(), ln.out.end(), rec.ln_out.row(n).begin());
        rec.ln_inv_std[n] = ln.inv_std;
        accumulate_row_times(ln.out, t.Wk, rec.keys.row(n));
        accumulate_row_times(ln.out, t.Wv, rec.values.row(n));
        scores[n] = dot(rec.query, rec.keys.row(n)) * scale;
      }
      rec.attention = softmax(scores);
      rec.context.assign(dh, 0.0);
      for (std::size_t n = 0; n < N; ++n) {
        const auto v = rec.values.row(n);
        for (std::size_t j = 0; j < dh; ++j) rec.context[j] += rec.attention[n] * v[j];
      }
      std::copy(t.cls.begin(), t.cls.end(), rec.pooled.begin());
      accumulate_row_times(rec.context, t.Wo, rec.pooled);
      r.attention = rec.attention;
      break;
    }
  }
  finish(r);
  return r;
}

AggregatorGrad aggregator_backward(const AggregatorParams& params, const BagForwardRecord& rec,
                                   const Matrix& bag, std::span<const double> grad_z, bool want_bag_grad) {
  if (rec.kind != params.kind || rec.generation != params.generation || rec.n != bag.rows() ||
      rec.d != bag.cols() || rec.pooled.size() != rec.d) {
    throw Error(ErrorCode::StaleRecord, "forward record does not match parameters or bag");
  }
  if (grad_z.size() != rec.d) throw Error(ErrorCode::ShapeMismatch, "grad_z length");
  const std::size_t N = rec.n;
  const std::size_t d = rec.d;

  AggregatorGrad g{zero_params(params.kind, params.dims), Matrix()};
  g.params.generation = params.generation;
  if (want_bag_grad) g.bag = Matrix(N, d);
  const Vector g_pooled = l2_normalize_backward(rec.pooled, grad_z);

  switch (params.kind) {
    case AggregatorKind::BGAP: {
      if (want_bag_grad) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t j = 0; j < d; ++j) g.bag(n, j) = g_pooled[j] / static_cast<double>(N);
      }
      break;
    }
    case AggregatorKind::BGMP: {
      if (want_bag_grad) {
        for (std::size_t j = 0; j < d; ++j) g.bag(rec.argmax_rows[j], j) = g_pooled[j];
      }
      break;
    }
    case AggregatorKind::ABMIL: {
      const auto& a = params.abmil();
      auto& ga = g.params.abmil();
      const std::size_t H = params.dims.attention_hidden;
      // d pooled / d a_n = x_n
      Vector g_att(N);
      double mean_g = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        g_att[n] = dot(g_pooled, bag.row(n));
        mean_g += rec.attention[n] * g_att[n];
      }
      Vector g_tanh_pre(H), g_sig_pre(H);
      for (std::size_t n = 0; n < N; ++n) {
        const double an = rec.attention[n];
        const double g_logit = an * (g_att[n] - mean_g);
        const auto th = rec.tanh_act.row(n);
        const auto sg = rec.sigmoid_act.row(n);
        for (std::size_t h = 0; h < H; ++h) {
          ga.w[h] += g_logit * th[h] * sg[h];
          const double g_gated = g_logit * a.w[h];
          g_tanh_pre[h] = g_gated * sg[h] * (1.0 - th[h] * th[h]);
          g_sig_pre[h] = g_gated * th[h] * sg[h] * (1.0 - sg[h]);
        }
        const auto x = bag.row(n);
        add_outer(ga.V, g_tanh_pre, x);
        add_outer(ga.U, g_sig_pre, x);
        if (want_bag_grad) {
          auto gx = g.bag.row(n);
          for (std::size_t j = 0; j < d; ++j) gx[j] = an * g_pooled[j];
          accumulate_row_times(g_tanh_pre, a.V, gx);
          accumulate_row_times(g_sig_pre, a.U, gx);
        }
      }
      break;
    }
    case AggregatorKind::SimpleTransformer: {
      const auto& t = params.transformer();
      auto& gt = g.params.transformer();
      const std::size_t dh = params.dims.effective_head_dim();
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

      // pooled = cls + context Wo
      for (std::size_t j = 0; j < d; ++j) gt.cls[j] += g_pooled[j];
      add_outer(gt.Wo, rec.context, g_pooled);
      const Vector g_context = matvec(t.Wo, g_pooled);

      Vector g_att(N);
      double mean_g = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        g_att[n] = dot(g_context, rec.values.row(n));
        mean_g += rec.attention[n] * g_att[n];
      }
      Vector g_query(dh, 0.0);
      Vector g_key(dh), g_value(dh);
      for (std::size_t n = 0; n < N; ++n) {
        const double g_score = rec.attention[n] * (g_att[n] - mean_g) * scale;
        const auto k = rec.keys.row(n);
        for (std::size_t j = 0; j < dh; ++j) {
          g_query[j] += g_score * k[j];
          g_key[j] = g_score * rec.query[j];
          g_value[j] = rec.attention[n] * g_context[j];
        }
        const auto u = rec.ln_out.row(n);
        add_outer(gt.Wk, u, g_key);
        add_outer(gt.Wv, u, g_value);
        Vector g_u = matvec(t.Wk, g_key);
        const Vector g_uv = matvec(t.Wv, g_value);
        for (std::size_t j = 0; j < d; ++j) g_u[j] += g_uv[j];
        const Vector gx = layer_norm_backward(rec.ln_hat.row(n), rec.ln_inv_std[n], g_u, t.ln_gamma,
                                              gt.ln_gamma, gt.ln_beta);
        if (want_bag_grad) std::copy(gx.begin(), gx.end(), g.bag.row(n).begin());
      }
      add_outer(gt.Wq, rec.cls_ln, g_query);
      const Vector g_cls_ln = matvec(t.Wq, g_query);
      const Vector g_cls =
          layer_norm_backward(rec.cls_hat, rec.cls_inv_std, g_cls_ln, t.ln_gamma, gt.ln_gamma, gt.ln_beta);
      for (std::size_t j = 0; j < d; ++j) gt.cls[j] += g_cls[j];
      break;
    }
  }
  return g;
}

}  // namespace zsmil

#include "ctxmt/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctxmt/error.hpp"
#include "ctxmt/tokenizer.hpp"

namespace ctxmt {

namespace {

constexpr double kMaskBias = -1e9;  // additive pre-softmax bias for masked keys
constexpr double kLnEps = 1e-6;

inline double dot(const double* a, const double* b, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void colsum_acc(const Matrix& m, Matrix& dst) {
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    double* d = dst.row(0);
    for (int c = 0; c < m.cols; ++c) d[c] += row[c];
  }
}

double gelu(double x) { return 0.5 * x * std::erfc(-x / M_SQRT2); }

double gelu_grad(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return 0.5 * std::erfc(-x / M_SQRT2) + x * phi;
}

double positional(int pos, int i, int d_model) {
  const double exponent = static_cast<double>(2 * (i / 2)) / d_model;
  const double angle = pos / std::pow(10000.0, exponent);
  return (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

void make_dropout_mask(Matrix& mask, int rows, int cols, double rate, Rng& rng) {
  mask.resize(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : mask.data) v = rng.uniform() >= rate ? keep_scale : 0.0;
}

// y = x (*) mask when training; identity (mask empty) otherwise.
void apply_dropout(Matrix& x, Matrix& mask, Mode mode, double rate, Rng* rng) {
  if (mode != Mode::kTrain || rate <= 0.0) {
    mask.resize(0, 0);
    return;
  }
  if (rng == nullptr)
    throw ValidationError("train-mode forward requires a dropout rng");
  make_dropout_mask(mask, x.rows, x.cols, rate, *rng);
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] *= mask.data[i];
}

void apply_dropout_backward(Matrix& dy, const Matrix& mask) {
  if (mask.size() == 0) return;
  for (std::size_t i = 0; i < dy.size(); ++i) dy.data[i] *= mask.data[i];
}

}  // namespace

void ModelConfig::validate() const {
  if (layers_enc < 1 || layers_dec < 1) throw ValidationError("need >= 1 layer per side");
  if (heads < 1 || d_model < 1 || d_ff < 1) throw ValidationError("bad model dims");
  if (d_model % heads != 0)
    throw ValidationError("d_model must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("dropout out of [0,1)");
  if (vocab_size < kReservedCount)
    throw ValidationError("vocab_size smaller than the reserved token count");
  if (max_positions < 1) throw ValidationError("max_positions must be >= 1");
}

namespace {

void shape_layernorm(LayerNormParams& p, int d) {
  p.gain.resize(1, d);
  p.bias.resize(1, d);
}

void shape_attention(AttentionParams& p, int d) {
  p.wq.resize(d, d);
  p.wk.resize(d, d);
  p.wv.resize(d, d);
  p.wo.resize(d, d);
  p.bq.resize(1, d);
  p.bk.resize(1, d);
  p.bv.resize(1, d);
  p.bo.resize(1, d);
}

void shape_ffn(FeedForwardParams& p, int d, int d_ff) {
  p.w1.resize(d, d_ff);
  p.b1.resize(1, d_ff);
  p.w2.resize(d_ff, d);
  p.b2.resize(1, d);
}

void init_uniform(Matrix& w, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : w.data) v = rng.uniform_sym(bound);
}

void init_layernorm(LayerNormParams& p) {
  std::fill(p.gain.data.begin(), p.gain.data.end(), 1.0);
  p.bias.zero();
}

void init_attention(AttentionParams& p, int d, Rng& rng) {
  init_uniform(p.wq, d, d, rng);
  init_uniform(p.wk, d, d, rng);
  init_uniform(p.wv, d, d, rng);
  init_uniform(p.wo, d, d, rng);
}

void init_ffn(FeedForwardParams& p, int d, int d_ff, Rng& rng) {
  init_uniform(p.w1, d, d_ff, rng);
  init_uniform(p.w2, d_ff, d, rng);
}

}  // namespace

Parameters::Parameters(const ModelConfig& cfg) : config(cfg) {
  cfg.validate();
  embedding.resize(cfg.vocab_size, cfg.d_model);
  enc_layers.resize(static_cast<std::size_t>(cfg.layers_enc));
  for (auto& l : enc_layers) {
    shape_layernorm(l.ln1, cfg.d_model);
    shape_attention(l.attn, cfg.d_model);
    shape_layernorm(l.ln2, cfg.d_model);
    shape_ffn(l.ffn, cfg.d_model, cfg.d_ff);
  }
  shape_layernorm(enc_final, cfg.d_model);
  dec_layers.resize(static_cast<std::size_t>(cfg.layers_dec));
  for (auto& l : dec_layers) {
    shape_layernorm(l.ln1, cfg.d_model);
    shape_attention(l.self_attn, cfg.d_model);
    shape_layernorm(l.ln2, cfg.d_model);
    shape_attention(l.cross_attn, cfg.d_model);
    shape_layernorm(l.ln3, cfg.d_model);
    shape_ffn(l.ffn, cfg.d_model, cfg.d_ff);
  }
  shape_layernorm(dec_final, cfg.d_model);
}

Parameters Parameters::init(const ModelConfig& cfg, Rng& rng) {
  Parameters p(cfg);
  init_uniform(p.embedding, cfg.vocab_size, cfg.d_model, rng);
  for (auto& l : p.enc_layers) {
    init_layernorm(l.ln1);
    init_attention(l.attn, cfg.d_model, rng);
    init_layernorm(l.ln2);
    init_ffn(l.ffn, cfg.d_model, cfg.d_ff, rng);
  }
  init_layernorm(p.enc_final);
  for (auto& l : p.dec_layers) {
    init_layernorm(l.ln1);
    init_attention(l.self_attn, cfg.d_model, rng);
    init_layernorm(l.ln2);
    init_attention(l.cross_attn, cfg.d_model, rng);
    init_layernorm(l.ln3);
    init_ffn(l.ffn, cfg.d_model, cfg.d_ff, rng);
  }
  init_layernorm(p.dec_final);
  return p;
}

Parameters Parameters::zeros_like() const { return Parameters(config); }

namespace {

template <class P, class M, class F>
void visit_arrays(P& p, F&& f) {
  f("embedding", static_cast<M*>(&p.embedding));
  auto visit_ln = [&](const std::string& prefix, auto& ln) {
    f(prefix + ".gain", static_cast<M*>(&ln.gain));
    f(prefix + ".bias", static_cast<M*>(&ln.bias));
  };
  auto visit_attn = [&](const std::string& prefix, auto& a) {
    f(prefix + ".wq", static_cast<M*>(&a.wq));
    f(prefix + ".bq", static_cast<M*>(&a.bq));
    f(prefix + ".wk", static_cast<M*>(&a.wk));
    f(prefix + ".bk", static_cast<M*>(&a.bk));
    f(prefix + ".wv", static_cast<M*>(&a.wv));
    f(prefix + ".bv", static_cast<M*>(&a.bv));
    f(prefix + ".wo", static_cast<M*>(&a.wo));
    f(prefix + ".bo", static_cast<M*>(&a.bo));
  };
  auto visit_ffn = [&](const std::string& prefix, auto& w) {
    f(prefix + ".w1", static_cast<M*>(&w.w1));
    f(prefix + ".b1", static_cast<M*>(&w.b1));
    f(prefix + ".w2", static_cast<M*>(&w.w2));
    f(prefix + ".b2", static_cast<M*>(&w.b2));
  };
  for (std::size_t i = 0; i < p.enc_layers.size(); ++i) {
    const std::string base = "enc." + std::to_string(i);
    auto& l = p.enc_layers[i];
    visit_ln(base + ".ln1", l.ln1);
    visit_attn(base + ".attn", l.attn);
    visit_ln(base + ".ln2", l.ln2);
    visit_ffn(base + ".ffn", l.ffn);
  }
  visit_ln("enc_final", p.enc_final);
  for (std::size_t i = 0; i < p.dec_layers.size(); ++i) {
    const std::string base = "dec." + std::to_string(i);
    auto& l = p.dec_layers[i];
    visit_ln(base + ".ln1", l.ln1);
    visit_attn(base + ".self_attn", l.self_attn);
    visit_ln(base + ".ln2", l.ln2);
    visit_attn(base + ".cross_attn", l.cross_attn);
    visit_ln(base + ".ln3", l.ln3);
    visit_ffn(base + ".ffn", l.ffn);
  }
  visit_ln("dec_final", p.dec_final);
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> Parameters::arrays() {
  std::vector<std::pair<std::string, Matrix*>> out;
  visit_arrays<Parameters, Matrix>(*this, [&](const std::string& name, Matrix* m) {
    out.emplace_back(name, m);
  });
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> Parameters::arrays() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  visit_arrays<const Parameters, const Matrix>(
      *this, [&](const std::string& name, const Matrix* m) {
        out.emplace_back(name, m);
      });
  return out;
}

std::size_t Parameters::coordinate_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : arrays()) n += m->size();
  return n;
}

double& Parameters::coordinate(std::size_t flat) {
  for (auto& [name, m] : arrays()) {
    if (flat < m->size()) return m->data[flat];
    flat -= m->size();
  }
  throw ValidationError("parameter coordinate out of range");
}

bool Parameters::all_finite() const {
  for (const auto& [name, m] : arrays()) {
    if (!ctxmt::all_finite(*m)) return false;
  }
  return true;
}

AttentionMask AttentionMask::all_visible(int queries, int keys) {
  AttentionMask m;
  m.queries = queries;
  m.keys = keys;
  m.visible.assign(static_cast<std::size_t>(queries) * keys, 1);
  return m;
}

AttentionMask AttentionMask::broadcast_keys(int queries,
                                            std::span<const std::uint8_t> key_visible) {
  AttentionMask m;
  m.queries = queries;
  m.keys = static_cast<int>(key_visible.size());
  m.visible.resize(static_cast<std::size_t>(queries) * m.keys);
  for (int q = 0; q < queries; ++q)
    for (int k = 0; k < m.keys; ++k) m.set(q, k, key_visible[static_cast<std::size_t>(k)] != 0);
  return m;
}

AttentionMask AttentionMask::causal(int n, std::span<const std::uint8_t> key_visible) {
  AttentionMask m;
  m.queries = n;
  m.keys = n;
  m.visible.assign(static_cast<std::size_t>(n) * n, 0);
  for (int q = 0; q < n; ++q) {
    for (int k = 0; k <= q; ++k) {
      const bool pad = !key_visible.empty() && key_visible[static_cast<std::size_t>(k)] == 0;
      m.set(q, k, !pad);
    }
  }
  return m;
}

void AttentionMask::validate_rows() const {
  for (int q = 0; q < queries; ++q) {
    bool any = false;
    for (int k = 0; k < keys; ++k) {
      if (at(q, k)) {
        any = true;
        break;
      }
    }
    if (!any)
      throw ValidationError("attention query row " + std::to_string(q) +
                            " has no visible key");
  }
}

std::vector<std::uint8_t> coatt_mask(std::span<const std::uint8_t> pad_mask,
                                     std::span<const std::uint8_t> src_context_mask) {
  if (!pad_mask.empty() && pad_mask.size() != src_context_mask.size())
    throw ValidationError("coatt_mask: pad and context masks differ in length");
  std::vector<std::uint8_t> visible(src_context_mask.size());
  bool any = false;
  for (std::size_t i = 0; i < src_context_mask.size(); ++i) {
    const bool pad = !pad_mask.empty() && pad_mask[i] != 0;
    visible[i] = (!pad && src_context_mask[i] == 0) ? 1 : 0;
    any = any || visible[i];
  }
  if (!any && !src_context_mask.empty())
    throw ValidationError("coatt_mask: every encoder position is masked");
  return visible;
}

void attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
               const AttentionMask& mask, Matrix& out, Matrix* weights_out) {
  if (queries.cols != keys.cols || keys.rows != values.rows)
    throw ValidationError("attention: inconsistent shapes");
  if (mask.queries != queries.rows || mask.keys != keys.rows)
    throw ValidationError("attention: mask shape mismatch");
  mask.validate_rows();

  const double scale = 1.0 / std::sqrt(static_cast<double>(queries.cols));
  Matrix weights(queries.rows, keys.rows);
  for (int qi = 0; qi < queries.rows; ++qi) {
    double maxv = -std::numeric_limits<double>::infinity();
    for (int kj = 0; kj < keys.rows; ++kj) {
      double s = dot(queries.row(qi), keys.row(kj), queries.cols) * scale;
      if (!mask.at(qi, kj)) s += kMaskBias;
      weights.at(qi, kj) = s;
      maxv = std::max(maxv, s);
    }
    double denom = 0.0;
    for (int kj = 0; kj < keys.rows; ++kj) {
      const double e = std::exp(weights.at(qi, kj) - maxv);
      weights.at(qi, kj) = e;
      denom += e;
    }
    for (int kj = 0; kj < keys.rows; ++kj) {
      // exact zero on invisible keys, not merely underflow
      weights.at(qi, kj) = mask.at(qi, kj) ? weights.at(qi, kj) / denom : 0.0;
    }
  }
  out.resize(queries.rows, values.cols);
  gemm_nn(weights, values, out);
  if (weights_out != nullptr) *weights_out = weights;
}

namespace {

// ---- embedding -------------------------------------------------------------

void embed_tokens(const Parameters& params, std::span<const int> ids, Matrix& x) {
  const auto& cfg = params.config;
  const int t_len = static_cast<int>(ids.size());
  if (t_len > cfg.max_positions)
    throw ValidationError("sequence length " + std::to_string(t_len) +
                          " exceeds max_positions " + std::to_string(cfg.max_positions));
  const double scale = std::sqrt(static_cast<double>(cfg.d_model));
  x.resize(t_len, cfg.d_model);
  for (int t = 0; t < t_len; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= cfg.vocab_size)
      throw ValidationError("token id out of range: " + std::to_string(id));
    const double* erow = params.embedding.row(id);
    double* xrow = x.row(t);
    for (int c = 0; c < cfg.d_model; ++c)
      xrow[c] = erow[c] * scale + positional(t, c, cfg.d_model);
  }
}

void embed_backward(const Parameters& params, std::span<const int> ids,
                    const Matrix& dx, Parameters& grads) {
  const double scale = std::sqrt(static_cast<double>(params.config.d_model));
  for (int t = 0; t < dx.rows; ++t)
    axpy(scale, dx.row(t), grads.embedding.row(ids[static_cast<std::size_t>(t)]), dx.cols);
}

// ---- layer norm ------------------------------------------------------------

void layernorm_forward(const LayerNormParams& p, const Matrix& x, Matrix& y,
                       LayerNormCache& cache) {
  const int d = x.cols;
  y.resize(x.rows, d);
  cache.x_hat.resize(x.rows, d);
  cache.inv_std.assign(static_cast<std::size_t>(x.rows), 0.0);
  for (int r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    double mean = 0.0;
    for (int c = 0; c < d; ++c) mean += xr[c];
    mean /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) {
      const double u = xr[c] - mean;
      var += u * u;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std[static_cast<std::size_t>(r)] = inv;
    double* hr = cache.x_hat.row(r);
    double* yr = y.row(r);
    const double* g = p.gain.row(0);
    const double* b = p.bias.row(0);
    for (int c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mean) * inv;
      yr[c] = g[c] * hr[c] + b[c];
    }
  }
}

void layernorm_backward(const LayerNormParams& p, const LayerNormCache& cache,
                        const Matrix& dy, Matrix& dx_acc, LayerNormParams& dp) {
  const int d = dy.cols;
  for (int r = 0; r < dy.rows; ++r) {
    const double* dyr = dy.row(r);
    const double* hr = cache.x_hat.row(r);
    const double* g = p.gain.row(0);
    double* dg = dp.gain.row(0);
    double* db = dp.bias.row(0);
    double m1 = 0.0, m2 = 0.0;
    for (int c = 0; c < d; ++c) {
      dg[c] += dyr[c] * hr[c];
      db[c] += dyr[c];
      const double dh = dyr[c] * g[c];
      m1 += dh;
      m2 += dh * hr[c];
    }
    m1 /= d;
    m2 /= d;
    const double inv = cache.inv_std[static_cast<std::size_t>(r)];
    double* dxr = dx_acc.row(r);
    for (int c = 0; c < d; ++c) {
      const double dh = dyr[c] * g[c];
      dxr[c] += inv * (dh - m1 - hr[c] * m2);
    }
  }
}

// ---- multi-head attention ---------------------------------------------------

// x_q already normalized; x_kv is x_q for self-attention, encoder output for
// cross-attention. context_keys, when non-empty, drives the per-head mass
// accounting over context positions.
void multihead_forward(const AttentionParams& ap, const ModelConfig& cfg,
                       const Matrix& x_q, const Matrix& x_kv,
                       const AttentionMask& mask, AttnCache& cache, Matrix& out,
                       std::span<const std::uint8_t> context_keys = {},
                       double* context_mass_per_head = nullptr) {
  mask.validate_rows();
  cache.x_q = x_q;
  gemm_nn(x_q, ap.wq, cache.q);
  add_row_vector(cache.q, ap.bq);
  gemm_nn(x_kv, ap.wk, cache.k);
  add_row_vector(cache.k, ap.bk);
  gemm_nn(x_kv, ap.wv, cache.v);
  add_row_vector(cache.v, ap.bv);

  const int heads = cfg.heads;
  const int dh = cfg.head_dim();
  const int tq = x_q.rows;
  const int tk = x_kv.rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  cache.weights.resize(static_cast<std::size_t>(heads));
  cache.concat.resize(tq, cfg.d_model);
  for (int h = 0; h < heads; ++h) {
    Matrix& w = cache.weights[static_cast<std::size_t>(h)];
    w.resize(tq, tk);
    const int off = h * dh;
    for (int qi = 0; qi < tq; ++qi) {
      double* wrow = w.row(qi);
      const double* qrow = cache.q.row(qi) + off;
      double maxv = -std::numeric_limits<double>::infinity();
      for (int kj = 0; kj < tk; ++kj) {
        double s = dot(qrow, cache.k.row(kj) + off, dh) * scale;
        if (!mask.at(qi, kj)) s += kMaskBias;
        wrow[kj] = s;
        maxv = std::max(maxv, s);
      }
      double denom = 0.0;
      for (int kj = 0; kj < tk; ++kj) {
        const double e = std::exp(wrow[kj] - maxv);
        wrow[kj] = e;
        denom += e;
      }
      double* crow = cache.concat.row(qi) + off;
      for (int kj = 0; kj < tk; ++kj) {
        const double wv = mask.at(qi, kj) ? wrow[kj] / denom : 0.0;
        wrow[kj] = wv;
        if (wv != 0.0) axpy(wv, cache.v.row(kj) + off, crow, dh);
      }
      if (context_mass_per_head != nullptr && !context_keys.empty()) {
        double mass = 0.0;
        for (int kj = 0; kj < tk; ++kj)
          if (context_keys[static_cast<std::size_t>(kj)]) mass += wrow[kj];
        context_mass_per_head[h] += mass;
      }
    }
  }
  gemm_nn(cache.concat, ap.wo, out);
  add_row_vector(out, ap.bo);
}

// dx_q and dx_kv may alias (self-attention). Keys with exactly zero weight
// contribute nothing to any gradient path, so no mask is needed here.
void multihead_backward(const AttentionParams& ap, const ModelConfig& cfg,
                        const AttnCache& cache, const Matrix& x_kv,
                        const Matrix& dout, Matrix& dx_q, Matrix& dx_kv,
                        AttentionParams& dap) {
  const int heads = cfg.heads;
  const int dh = cfg.head_dim();
  const int tq = cache.q.rows;
  const int tk = cache.k.rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  gemm_tn(cache.concat, dout, dap.wo, /*accumulate=*/true);
  colsum_acc(dout, dap.bo);
  Matrix dconcat;
  gemm_nt(dout, ap.wo, dconcat);

  Matrix dq(tq, cfg.d_model), dk(tk, cfg.d_model), dv(tk, cfg.d_model);
  std::vector<double> dw(static_cast<std::size_t>(tk));
  for (int h = 0; h < heads; ++h) {
    const Matrix& w = cache.weights[static_cast<std::size_t>(h)];
    const int off = h * dh;
    for (int qi = 0; qi < tq; ++qi) {
      const double* wrow = w.row(qi);
      const double* dcrow = dconcat.row(qi) + off;
      // gradient through the weighted value sum
      double dw_dot_w = 0.0;
      for (int kj = 0; kj < tk; ++kj) {
        if (wrow[kj] == 0.0) {
          dw[static_cast<std::size_t>(kj)] = 0.0;
          continue;
        }
        const double g = dot(dcrow, cache.v.row(kj) + off, dh);
        dw[static_cast<std::size_t>(kj)] = g;
        dw_dot_w += g * wrow[kj];
        axpy(wrow[kj], dcrow, dv.row(kj) + off, dh);
      }
      // softmax backward: ds_j = w_j (dw_j - sum_k dw_k w_k)
      const double* qrow = cache.q.row(qi) + off;
      double* dqrow = dq.row(qi) + off;
      for (int kj = 0; kj < tk; ++kj) {
        const double wv = wrow[kj];
        if (wv == 0.0) continue;
        const double ds = wv * (dw[static_cast<std::size_t>(kj)] - dw_dot_w) * scale;
        axpy(ds, cache.k.row(kj) + off, dqrow, dh);
        axpy(ds, qrow, dk.row(kj) + off, dh);
      }
    }
  }

  gemm_tn(cache.x_q, dq, dap.wq, true);
  colsum_acc(dq, dap.bq);
  gemm_nt(dq, ap.wq, dx_q, true);

  gemm_tn(x_kv, dk, dap.wk, true);
  colsum_acc(dk, dap.bk);
  gemm_nt(dk, ap.wk, dx_kv, true);

  gemm_tn(x_kv, dv, dap.wv, true);
  colsum_acc(dv, dap.bv);
  gemm_nt(dv, ap.wv, dx_kv, true);
}

// ---- feed-forward ----------------------------------------------------------

void ffn_forward(const FeedForwardParams& fp, const Matrix& x, FfnCache& cache,
                 Matrix& out) {
  cache.x_in = x;
  gemm_nn(x, fp.w1, cache.h_pre);
  add_row_vector(cache.h_pre, fp.b1);
  cache.h_act.resize(cache.h_pre.rows, cache.h_pre.cols);
  for (std::size_t i = 0; i < cache.h_pre.size(); ++i)
    cache.h_act.data[i] = gelu(cache.h_pre.data[i]);
  gemm_nn(cache.h_act, fp.w2, out);
  add_row_vector(out, fp.b2);
}

void ffn_backward(const FeedForwardParams& fp, const FfnCache& cache,
                  const Matrix& dout, Matrix& dx_acc, FeedForwardParams& dfp) {
  gemm_tn(cache.h_act, dout, dfp.w2, true);
  colsum_acc(dout, dfp.b2);
  Matrix dh;
  gemm_nt(dout, fp.w2, dh);
  for (std::size_t i = 0; i < dh.size(); ++i)
    dh.data[i] *= gelu_grad(cache.h_pre.data[i]);
  gemm_tn(cache.x_in, dh, dfp.w1, true);
  colsum_acc(dh, dfp.b1);
  gemm_nt(dh, fp.w1, dx_acc, true);
}

std::vector<std::uint8_t> invert_pad(std::span<const std::uint8_t> pad_mask, int len) {
  std::vector<std::uint8_t> visible(static_cast<std::size_t>(len), 1);
  for (std::size_t i = 0; i < pad_mask.size(); ++i)
    if (pad_mask[i]) visible[i] = 0;
  return visible;
}

}  // namespace

Matrix encode_source(const Parameters& params, std::span<const int> source_ids,
                     std::span<const std::uint8_t> pad_mask, Mode mode,
                     Rng* dropout_rng, ForwardCache* cache) {
  const auto& cfg = params.config;
  if (source_ids.empty()) throw ValidationError("encode_source: empty input");
  if (!pad_mask.empty() && pad_mask.size() != source_ids.size())
    throw ValidationError("encode_source: pad mask length mismatch");

  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.enc_layers.resize(static_cast<std::size_t>(cfg.layers_enc));

  Matrix x;
  embed_tokens(params, source_ids, x);
  apply_dropout(x, fc.enc_embed_drop, mode, cfg.dropout, dropout_rng);

  const auto key_visible = invert_pad(pad_mask, static_cast<int>(source_ids.size()));
  const auto self_mask =
      AttentionMask::broadcast_keys(static_cast<int>(source_ids.size()), key_visible);
  self_mask.validate_rows();

  Matrix norm, sub;
  for (int li = 0; li < cfg.layers_enc; ++li) {
    auto& lp = params.enc_layers[static_cast<std::size_t>(li)];
    auto& lc = fc.enc_layers[static_cast<std::size_t>(li)];

    layernorm_forward(lp.ln1, x, norm, lc.ln1);
    multihead_forward(lp.attn, cfg, norm, norm, self_mask, lc.attn, sub);
    apply_dropout(sub, lc.attn.drop_mask, mode, cfg.dropout, dropout_rng);
    add_inplace(x, sub);

    layernorm_forward(lp.ln2, x, norm, lc.ln2);
    ffn_forward(lp.ffn, norm, lc.ffn, sub);
    apply_dropout(sub, lc.ffn.drop_mask, mode, cfg.dropout, dropout_rng);
    add_inplace(x, sub);
  }
  layernorm_forward(params.enc_final, x, fc.enc_out, fc.enc_final);
  return fc.enc_out;
}

Matrix decode_teacher_forced(const Parameters& params, const Matrix& enc_out,
                             std::span<const std::uint8_t> cross_visible,
                             std::span<const int> dec_input_ids,
                             std::span<const std::uint8_t> dec_pad_mask, Mode mode,
                             Rng* dropout_rng, ForwardCache* cache,
                             std::span<const std::uint8_t> src_context_mask) {
  const auto& cfg = params.config;
  if (dec_input_ids.empty()) throw ValidationError("decoder input is empty");
  if (static_cast<int>(cross_visible.size()) != enc_out.rows)
    throw ValidationError("cross visibility length mismatch");

  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.dec_layers.resize(static_cast<std::size_t>(cfg.layers_dec));
  fc.dec_input_ids.assign(dec_input_ids.begin(), dec_input_ids.end());
  fc.cross_visible.assign(cross_visible.begin(), cross_visible.end());
  fc.cross_context_mass = 0.0;
  fc.cross_context_mass_per_head.assign(
      static_cast<std::size_t>(cfg.layers_dec * cfg.heads), 0.0);

  const int t_len = static_cast<int>(dec_input_ids.size());
  Matrix y;
  embed_tokens(params, dec_input_ids, y);
  apply_dropout(y, fc.dec_embed_drop, mode, cfg.dropout, dropout_rng);

  std::vector<std::uint8_t> dec_visible = invert_pad(dec_pad_mask, t_len);
  const auto self_mask = AttentionMask::causal(t_len, dec_visible);
  const auto cross = AttentionMask::broadcast_keys(t_len, cross_visible);
  self_mask.validate_rows();
  cross.validate_rows();

  Matrix norm, sub;
  for (int li = 0; li < cfg.layers_dec; ++li) {
    auto& lp = params.dec_layers[static_cast<std::size_t>(li)];
    auto& lc = fc.dec_layers[static_cast<std::size_t>(li)];

    layernorm_forward(lp.ln1, y, norm, lc.ln1);
    multihead_forward(lp.self_attn, cfg, norm, norm, self_mask, lc.self_attn, sub);
    apply_dropout(sub, lc.self_attn.drop_mask, mode, cfg.dropout, dropout_rng);
    add_inplace(y, sub);

    layernorm_forward(lp.ln2, y, norm, lc.ln2);
    multihead_forward(lp.cross_attn, cfg, norm, enc_out, cross, lc.cross_attn, sub,
                      src_context_mask,
                      src_context_mask.empty()
                          ? nullptr
                          : fc.cross_context_mass_per_head.data() +
                                static_cast<std::size_t>(li) * cfg.heads);
    apply_dropout(sub, lc.cross_attn.drop_mask, mode, cfg.dropout, dropout_rng);
    add_inplace(y, sub);

    layernorm_forward(lp.ln3, y, norm, lc.ln3);
    ffn_forward(lp.ffn, norm, lc.ffn, sub);
    apply_dropout(sub, lc.ffn.drop_mask, mode, cfg.dropout, dropout_rng);
    add_inplace(y, sub);
  }
  layernorm_forward(params.dec_final, y, fc.dec_out, fc.dec_final);
  for (double m : fc.cross_context_mass_per_head) fc.cross_context_mass += m;

  Matrix logits;
  gemm_nt(fc.dec_out, params.embedding, logits);
  return logits;
}

Matrix model_forward(const Parameters& params, const EncodedExample& example,
                     Mode mode, Rng* dropout_rng, ForwardCache* cache,
                     bool use_coattmask) {
  if (example.source_ids.size() != example.src_context_mask.size() ||
      example.target_ids.size() != example.tgt_loss_mask.size())
    throw ValidationError("example mask lengths do not match sequences");
  if (example.target_ids.size() < 2)
    throw ValidationError("target must hold at least BOS and one token");

  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;

  const Matrix enc_out =
      encode_source(params, example.source_ids, {}, mode, dropout_rng, &fc);

  std::vector<std::uint8_t> visible;
  if (use_coattmask) {
    visible = coatt_mask({}, example.src_context_mask);
  } else {
    visible.assign(example.source_ids.size(), 1);
  }

  const std::span<const int> dec_input(example.target_ids.data(),
                                       example.target_ids.size() - 1);
  return decode_teacher_forced(params, fc.enc_out, visible, dec_input, {}, mode,
                               dropout_rng, &fc, example.src_context_mask);
}

void model_backward(const Parameters& params, const EncodedExample& example,
                    const ForwardCache& fc, const Matrix& dlogits,
                    Parameters& grads) {
  const auto& cfg = params.config;
  const int t_dec = static_cast<int>(fc.dec_input_ids.size());
  if (dlogits.rows != t_dec || dlogits.cols != cfg.vocab_size)
    throw ValidationError("dlogits shape mismatch");

  // logits = dec_out * E^T
  Matrix dh;
  gemm_nn(dlogits, params.embedding, dh);
  gemm_tn(dlogits, fc.dec_out, grads.embedding, true);

  Matrix dy(t_dec, cfg.d_model);
  layernorm_backward(params.dec_final, fc.dec_final, dh, dy, grads.dec_final);

  Matrix d_enc_out(fc.enc_out.rows, cfg.d_model);
  Matrix dsub, dnorm;
  for (int li = cfg.layers_dec - 1; li >= 0; --li) {
    const auto& lp = params.dec_layers[static_cast<std::size_t>(li)];
    const auto& lc = fc.dec_layers[static_cast<std::size_t>(li)];
    auto& gp = grads.dec_layers[static_cast<std::size_t>(li)];

    // y3 = y2 + drop(ffn(ln3(y2)))
    dsub = dy;
    apply_dropout_backward(dsub, lc.ffn.drop_mask);
    dnorm.resize(t_dec, cfg.d_model);
    ffn_backward(lp.ffn, lc.ffn, dsub, dnorm, gp.ffn);
    layernorm_backward(lp.ln3, lc.ln3, dnorm, dy, gp.ln3);

    // y2 = y1 + drop(cross(ln2(y1), enc_out))
    dsub = dy;
    apply_dropout_backward(dsub, lc.cross_attn.drop_mask);
    dnorm.resize(t_dec, cfg.d_model);
    multihead_backward(lp.cross_attn, cfg, lc.cross_attn, fc.enc_out, dsub, dnorm,
                       d_enc_out, gp.cross_attn);
    layernorm_backward(lp.ln2, lc.ln2, dnorm, dy, gp.ln2);

    // y1 = y0 + drop(self(ln1(y0)))
    dsub = dy;
    apply_dropout_backward(dsub, lc.self_attn.drop_mask);
    dnorm.resize(t_dec, cfg.d_model);
    multihead_backward(lp.self_attn, cfg, lc.self_attn, lc.self_attn.x_q, dsub,
                       dnorm, dnorm, gp.self_attn);
    layernorm_backward(lp.ln1, lc.ln1, dnorm, dy, gp.ln1);
  }
  apply_dropout_backward(dy, fc.dec_embed_drop);
  embed_backward(params, fc.dec_input_ids, dy, grads);

  // encoder side, fed by the accumulated cross-attention gradient
  const int t_enc = fc.enc_out.rows;
  Matrix dx(t_enc, cfg.d_model);
  layernorm_backward(params.enc_final, fc.enc_final, d_enc_out, dx, grads.enc_final);
  for (int li = cfg.layers_enc - 1; li >= 0; --li) {
    const auto& lp = params.enc_layers[static_cast<std::size_t>(li)];
    const auto& lc = fc.enc_layers[static_cast<std::size_t>(li)];
    auto& gp = grads.enc_layers[static_cast<std::size_t>(li)];

    dsub = dx;
    apply_dropout_backward(dsub, lc.ffn.drop_mask);
    dnorm.resize(t_enc, cfg.d_model);
    ffn_backward(lp.ffn, lc.ffn, dsub, dnorm, gp.ffn);
    layernorm_backward(lp.ln2, lc.ln2, dnorm, dx, gp.ln2);

    dsub = dx;
    apply_dropout_backward(dsub, lc.attn.drop_mask);
    dnorm.resize(t_enc, cfg.d_model);
    multihead_backward(lp.attn, cfg, lc.attn, lc.attn.x_q, dsub, dnorm, dnorm,
                       gp.attn);
    layernorm_backward(lp.ln1, lc.ln1, dnorm, dx, gp.ln1);
  }
  apply_dropout_backward(dx, fc.enc_embed_drop);
  embed_backward(params, example.source_ids, dx, grads);
}

namespace {

std::vector<double> last_row_log_softmax(const Matrix& logits) {
  const int v = logits.cols;
  const double* row = logits.row(logits.rows - 1);
  double maxv = row[0];
  for (int i = 1; i < v; ++i) maxv = std::max(maxv, row[i]);
  double denom = 0.0;
  for (int i = 0; i < v; ++i) denom += std::exp(row[i] - maxv);
  const double lse = maxv + std::log(denom);
  std::vector<double> out(static_cast<std::size_t>(v));
  for (int i = 0; i < v; ++i) out[static_cast<std::size_t>(i)] = row[i] - lse;
  return out;
}

// Extends `prefix` greedily (argmax, lowest-index tie-break) until EOS or the
// total target length reaches max_total_len.
void greedy_extend(const Parameters& params, const Matrix& enc_out,
                   std::span<const std::uint8_t> visible, std::vector<int>& prefix,
                   int max_total_len) {
  while (static_cast<int>(prefix.size()) < max_total_len) {
    const Matrix logits =
        decode_teacher_forced(params, enc_out, visible, prefix, {}, Mode::kEval);
    const auto logp = last_row_log_softmax(logits);
    int best = 0;
    for (int i = 1; i < static_cast<int>(logp.size()); ++i)
      if (logp[static_cast<std::size_t>(i)] > logp[static_cast<std::size_t>(best)])
        best = i;
    prefix.push_back(best);
    if (best == kEosId) break;
  }
}

struct Beam {
  std::vector<int> ids;  // includes leading BOS
  double score = 0.0;    // sum of generated-token log-probabilities
};

std::vector<int> beam_generate(const Parameters& params, const Matrix& enc_out,
                               std::span<const std::uint8_t> visible,
                               const GenerateOptions& opts) {
  const int width = opts.beam_width;
  std::vector<Beam> live = {Beam{{kBosId}, 0.0}};
  std::vector<std::pair<double, Beam>> finished;  // (length-normalized score, beam)

  auto normalized = [](const Beam& b) {
    const int generated = static_cast<int>(b.ids.size()) - 1;
    return b.score / std::max(generated, 1);
  };

  while (!live.empty() && static_cast<int>(live.front().ids.size()) < opts.max_len) {
    std::vector<std::pair<double, Beam>> candidates;  // (raw score, beam)
    for (const auto& beam : live) {
      const Matrix logits =
          decode_teacher_forced(params, enc_out, visible, beam.ids, {}, Mode::kEval);
      const auto logp = last_row_log_softmax(logits);
      std::vector<int> order(logp.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return logp[static_cast<std::size_t>(a)] > logp[static_cast<std::size_t>(b)];
      });
      const int take = std::min<int>(width, static_cast<int>(order.size()));
      for (int r = 0; r < take; ++r) {
        Beam next = beam;
        next.ids.push_back(order[static_cast<std::size_t>(r)]);
        next.score += logp[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
        candidates.emplace_back(next.score, std::move(next));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    live.clear();
    const int take_total = std::min<int>(width, static_cast<int>(candidates.size()));
    for (int idx = 0; idx < take_total; ++idx) {
      Beam& beam = candidates[static_cast<std::size_t>(idx)].second;
      if (beam.ids.back() == kEosId) {
        finished.emplace_back(normalized(beam), std::move(beam));
      } else {
        live.push_back(std::move(beam));
      }
    }
  }
  for (auto& beam : live) finished.emplace_back(normalized(beam), std::move(beam));
  if (finished.empty()) return {};
  const auto best = std::max_element(
      finished.begin(), finished.end(),
      [](const auto& a, const auto& b) { return a.first < b.first; });
  return {best->second.ids.begin() + 1, best->second.ids.end()};
}

}  // namespace

std::vector<int> generate(const Parameters& params, std::span<const int> source_ids,
                          std::span<const std::uint8_t> src_context_mask,
                          const GenerateOptions& opts) {
  if (opts.beam_width < 1) throw ValidationError("beam width must be >= 1");
  const Matrix enc_out = encode_source(params, source_ids, {}, Mode::kEval);
  const auto visible = coatt_mask({}, src_context_mask);

  if (opts.beam_width == 1) {
    std::vector<int> prefix = {kBosId};
    greedy_extend(params, enc_out, visible, prefix, opts.max_len);
    return {prefix.begin() + 1, prefix.end()};
  }
  return beam_generate(params, enc_out, visible, opts);
}

std::vector<int> forced_prefix_generate(const Parameters& params,
                                        std::span<const int> source_ids,
                                        std::span<const std::uint8_t> src_context_mask,
                                        std::span<const int> gold_prefix_ids,
                                        int max_len) {
  if (gold_prefix_ids.empty() || gold_prefix_ids.front() != kBosId)
    throw ValidationError("gold prefix must start with BOS");
  if (static_cast<int>(gold_prefix_ids.size()) >= max_len)
    throw ValidationError("gold prefix exceeds max_len");
  const Matrix enc_out = encode_source(params, source_ids, {}, Mode::kEval);
  const auto visible = coatt_mask({}, src_context_mask);

  std::vector<int> prefix(gold_prefix_ids.begin(), gold_prefix_ids.end());
  const std::size_t forced = prefix.size();
  greedy_extend(params, enc_out, visible, prefix, max_len);
  return {prefix.begin() + static_cast<long>(forced), prefix.end()};
}

}  // namespace ctxmt

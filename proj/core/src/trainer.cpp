#include "ctxmt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "ctxmt/error.hpp"
#include "ctxmt/synthetic.hpp"

namespace ctxmt {

namespace {

void row_log_softmax(const double* row, int n, double* out) {
  double maxv = row[0];
  for (int i = 1; i < n; ++i) maxv = std::max(maxv, row[i]);
  double denom = 0.0;
  for (int i = 0; i < n; ++i) denom += std::exp(row[i] - maxv);
  const double lse = maxv + std::log(denom);
  for (int i = 0; i < n; ++i) out[i] = row[i] - lse;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (lr_scale <= 0.0) throw ValidationError("lr_scale must be positive");
  if (warmup_steps < 1) throw ValidationError("warmup_steps must be >= 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw ValidationError("label_smoothing out of [0,1)");
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (patience < 1) throw ValidationError("patience must be >= 1");
  if (eval_interval < 0) throw ValidationError("eval_interval must be >= 0");
  if (grad_clip < 0.0) throw ValidationError("grad_clip must be >= 0");
  if (ema_decay < 0.0 || ema_decay >= 1.0)
    throw ValidationError("ema_decay out of [0,1)");
}

LabelView shifted_labels(const EncodedExample& example) {
  if (example.target_ids.size() < 2)
    throw ValidationError("example target too short for label shift");
  LabelView view;
  view.labels = std::span<const int>(example.target_ids).subspan(1);
  view.mask = std::span<const std::uint8_t>(example.tgt_loss_mask).subspan(1);
  return view;
}

LossParts masked_cross_entropy_parts(const Matrix& logits,
                                     std::span<const int> labels,
                                     std::span<const std::uint8_t> label_mask,
                                     double label_smoothing) {
  if (labels.size() != label_mask.size() ||
      static_cast<int>(labels.size()) != logits.rows)
    throw ValidationError("masked_cross_entropy: shape mismatch");
  const int v = logits.cols;
  std::vector<double> logp(static_cast<std::size_t>(v));
  LossParts parts;
  for (int t = 0; t < logits.rows; ++t) {
    if (!label_mask[static_cast<std::size_t>(t)]) continue;
    const int gold = labels[static_cast<std::size_t>(t)];
    if (gold < 0 || gold >= v)
      throw ValidationError("gold label out of vocabulary range");
    row_log_softmax(logits.row(t), v, logp.data());
    double loss = -(1.0 - label_smoothing) * logp[static_cast<std::size_t>(gold)];
    if (label_smoothing > 0.0) {
      double sum_logp = 0.0;
      for (int i = 0; i < v; ++i) sum_logp += logp[static_cast<std::size_t>(i)];
      loss -= label_smoothing / v * sum_logp;
    }
    parts.sum += loss;
    parts.tokens += 1;
  }
  if (parts.tokens == 0)
    throw ValidationError("masked_cross_entropy: no supervised position");
  return parts;
}

double masked_cross_entropy(const Matrix& logits, std::span<const int> labels,
                            std::span<const std::uint8_t> label_mask,
                            double label_smoothing) {
  return masked_cross_entropy_parts(logits, labels, label_mask, label_smoothing)
      .mean();
}

LossParts masked_cross_entropy_grad(const Matrix& logits,
                                    std::span<const int> labels,
                                    std::span<const std::uint8_t> label_mask,
                                    double label_smoothing, double grad_scale,
                                    Matrix& dlogits) {
  if (labels.size() != label_mask.size() ||
      static_cast<int>(labels.size()) != logits.rows)
    throw ValidationError("masked_cross_entropy: shape mismatch");
  const int v = logits.cols;
  dlogits.resize(logits.rows, v);
  std::vector<double> logp(static_cast<std::size_t>(v));
  LossParts parts;
  const double uniform = label_smoothing / v;
  for (int t = 0; t < logits.rows; ++t) {
    if (!label_mask[static_cast<std::size_t>(t)]) continue;  // row stays zero
    const int gold = labels[static_cast<std::size_t>(t)];
    if (gold < 0 || gold >= v)
      throw ValidationError("gold label out of vocabulary range");
    row_log_softmax(logits.row(t), v, logp.data());
    double loss = -(1.0 - label_smoothing) * logp[static_cast<std::size_t>(gold)];
    double* drow = dlogits.row(t);
    double sum_logp = 0.0;
    for (int i = 0; i < v; ++i) {
      const double p = std::exp(logp[static_cast<std::size_t>(i)]);
      sum_logp += logp[static_cast<std::size_t>(i)];
      // d(smoothed NLL)/dlogit = softmax - target distribution
      drow[i] = (p - uniform) * grad_scale;
    }
    if (label_smoothing > 0.0) loss -= uniform * sum_logp;
    drow[gold] -= (1.0 - label_smoothing) * grad_scale;
    parts.sum += loss;
    parts.tokens += 1;
  }
  if (parts.tokens == 0)
    throw ValidationError("masked_cross_entropy: no supervised position");
  return parts;
}

LossParts batch_loss_and_grad(const Parameters& params,
                              std::span<const EncodedExample> batch,
                              double label_smoothing, Mode mode, Rng* dropout_rng,
                              Parameters& grads, bool use_coattmask) {
  int total_tokens = 0;
  for (const auto& ex : batch) {
    const auto view = shifted_labels(ex);
    for (auto m : view.mask) total_tokens += m ? 1 : 0;
  }
  if (total_tokens == 0)
    throw ValidationError("batch has no supervised positions");

  LossParts total;
  ForwardCache cache;
  Matrix dlogits;
  const double scale = 1.0 / total_tokens;
  for (const auto& ex : batch) {
    const Matrix logits =
        model_forward(params, ex, mode, dropout_rng, &cache, use_coattmask);
    const auto view = shifted_labels(ex);
    const auto parts = masked_cross_entropy_grad(logits, view.labels, view.mask,
                                                 label_smoothing, scale, dlogits);
    model_backward(params, ex, cache, dlogits, grads);
    total.sum += parts.sum;
    total.tokens += parts.tokens;
  }
  return total;
}

double noam_lr(const TrainConfig& cfg, int d_model, std::int64_t step) {
  const double s = static_cast<double>(std::max<std::int64_t>(step, 1));
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.lr_scale / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

void adam_step(Parameters& params, Parameters& grads, AdamState& state,
               const TrainConfig& cfg, double lr) {
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads.arrays())
      for (double v : g->data) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      const double shrink = cfg.grad_clip / norm;
      for (auto& [name, g] : grads.arrays())
        for (double& v : g->data) v *= shrink;
    }
  }

  state.step += 1;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  auto pa = params.arrays();
  auto ga = grads.arrays();
  auto ma = state.m.arrays();
  auto va = state.v.arrays();
  for (std::size_t a = 0; a < pa.size(); ++a) {
    auto& p = pa[a].second->data;
    const auto& g = ga[a].second->data;
    auto& m = ma[a].second->data;
    auto& v = va[a].second->data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

namespace {

// Marker label position: the last supervised label that is not EOS. Returns
// -1 when absent.
int marker_label_position(const LabelView& view) {
  for (int t = static_cast<int>(view.labels.size()) - 1; t >= 0; --t) {
    if (view.mask[static_cast<std::size_t>(t)] &&
        view.labels[static_cast<std::size_t>(t)] != kEosId)
      return t;
  }
  return -1;
}

int argmax_row(const Matrix& m, int row) {
  int best = 0;
  const double* r = m.row(row);
  for (int i = 1; i < m.cols; ++i)
    if (r[i] > r[best]) best = i;
  return best;
}

}  // namespace

EvalMetrics evaluate(const Parameters& params,
                     std::span<const EncodedExample> dataset,
                     double label_smoothing, const Vocabulary& vocab) {
  EvalMetrics out;
  LossParts total;
  const bool synthetic =
      vocab.contains(kMasuMarker) && vocab.contains(kDaMarker);
  std::int64_t marker_hits = 0, marker_total = 0;
  ForwardCache cache;
  for (const auto& ex : dataset) {
    const Matrix logits = model_forward(params, ex, Mode::kEval, nullptr, &cache);
    const auto view = shifted_labels(ex);
    const auto parts =
        masked_cross_entropy_parts(logits, view.labels, view.mask, label_smoothing);
    total.sum += parts.sum;
    total.tokens += parts.tokens;
    if (synthetic) {
      const int pos = marker_label_position(view);
      if (pos >= 0) {
        marker_total += 1;
        if (argmax_row(logits, pos) == view.labels[static_cast<std::size_t>(pos)])
          marker_hits += 1;
      }
    }
  }
  out.loss = total.mean();
  if (synthetic && marker_total > 0)
    out.marker_accuracy = static_cast<double>(marker_hits) / marker_total;
  return out;
}

namespace {

// Shuffle, group by similar total length, then shuffle batch order.
std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<EncodedExample>& dataset, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1],
              order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto len = [&](std::size_t idx) {
      return (dataset[idx].source_ids.size() + dataset[idx].target_ids.size()) / 8;
    };
    return len(a) < len(b);
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(start),
                         order.begin() + static_cast<long>(end));
  }
  for (std::size_t i = batches.size(); i > 1; --i)
    std::swap(batches[i - 1],
              batches[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  return batches;
}

}  // namespace

TrainResult train(const CorpusSet& corpus, const ContextConfig& ctx_cfg,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Vocabulary& vocab, const TrainLogCallback& on_eval) {
  ctx_cfg.validate();
  train_cfg.validate();
  ModelConfig mc = model_cfg;
  if (mc.vocab_size == 0) mc.vocab_size = vocab.size();
  mc.validate();
  if (mc.vocab_size != vocab.size())
    throw ValidationError("model vocab_size does not match the vocabulary");
  if (corpus.train.empty()) throw ValidationError("train split is empty");
  if (corpus.dev.empty()) throw ValidationError("dev split is empty");

  auto init_rng = Rng::derive(train_cfg.seed, {fnv1a64("init")});
  Parameters params = Parameters::init(mc, init_rng);
  Parameters grads = params.zeros_like();
  AdamState adam(mc);

  const bool use_ema = train_cfg.ema_decay > 0.0;
  Parameters ema = params;  // evaluated weights when EMA is on
  const auto ema_update = [&] {
    if (!use_ema) return;
    const double d = train_cfg.ema_decay;
    auto ea = ema.arrays();
    auto pa = params.arrays();
    for (std::size_t a = 0; a < ea.size(); ++a) {
      auto& e = ea[a].second->data;
      const auto& p = pa[a].second->data;
      for (std::size_t i = 0; i < e.size(); ++i)
        e[i] = d * e[i] + (1.0 - d) * p[i];
    }
  };
  const Parameters& eval_params = use_ema ? ema : params;

  // Dynamic models validate on a dev set spanning all context sizes (drawn
  // once, fixed across evals) so the best checkpoint is balanced across the
  // sizes it must serve; fixed-context models validate at their full context.
  const auto dev_set =
      make_dataset(corpus.dev, ctx_cfg, vocab,
                   mix64(train_cfg.seed, fnv1a64("dev-encoding")));

  TrainResult result;
  result.best_params = params;
  result.best_dev_loss = std::numeric_limits<double>::infinity();
  // sub-nano improvements do not reset patience
  constexpr double kMinImprovement = 1e-9;
  int evals_since_best = 0;
  std::int64_t step = 0;
  const auto t0 = std::chrono::steady_clock::now();
  double window_loss_sum = 0.0;
  std::int64_t window_loss_count = 0;

  const auto run_eval = [&](int epoch) {
    const auto metrics =
        evaluate(eval_params, dev_set, train_cfg.label_smoothing, vocab);
    TrainLogEntry entry;
    entry.step = step;
    entry.epoch = epoch;
    entry.train_loss = window_loss_count > 0 ? window_loss_sum / window_loss_count : 0.0;
    entry.dev_loss = metrics.loss;
    entry.marker_accuracy = metrics.marker_accuracy;
    entry.lr = noam_lr(train_cfg, mc.d_model, step);
    entry.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    result.log.push_back(entry);
    if (on_eval) on_eval(entry);
    window_loss_sum = 0.0;
    window_loss_count = 0;

    if (metrics.loss < result.best_dev_loss - kMinImprovement) {
      result.best_dev_loss = metrics.loss;
      result.best_params = eval_params;
      result.best_step = step;
      evals_since_best = 0;
    } else {
      evals_since_best += 1;
    }
    return evals_since_best >= train_cfg.patience;
  };

  bool stop = false;
  for (int epoch = 0; epoch < train_cfg.max_epochs && !stop; ++epoch) {
    const auto epoch_u = static_cast<std::uint64_t>(epoch);
    // With ctx_cfg.dynamic this resamples every example's context size.
    const auto dataset =
        make_dataset(corpus.train, ctx_cfg, vocab,
                     mix64(train_cfg.seed, mix64(fnv1a64("data"), epoch_u)));
    auto batch_rng = Rng::derive(train_cfg.seed, {fnv1a64("batch"), epoch_u});
    auto dropout_rng = Rng::derive(train_cfg.seed, {fnv1a64("dropout"), epoch_u});
    const auto batches = make_batches(dataset, train_cfg.batch_size, batch_rng);

    std::vector<EncodedExample> batch;
    for (const auto& batch_idx : batches) {
      batch.clear();
      for (auto idx : batch_idx) batch.push_back(dataset[idx]);

      for (auto& [name, g] : grads.arrays()) g->zero();
      const auto parts =
          batch_loss_and_grad(params, batch, train_cfg.label_smoothing,
                              Mode::kTrain, &dropout_rng, grads);
      const double loss = parts.mean();
      if (!std::isfinite(loss)) {
        result.diverged = true;
        stop = true;
        break;
      }
      step += 1;
      adam_step(params, grads, adam, train_cfg, noam_lr(train_cfg, mc.d_model, step));
      ema_update();
      window_loss_sum += loss;
      window_loss_count += 1;

      if (train_cfg.eval_interval > 0 && step % train_cfg.eval_interval == 0) {
        if (run_eval(epoch)) {
          result.early_stopped = true;
          stop = true;
          break;
        }
      }
    }
    if (!stop && train_cfg.eval_interval == 0) {
      if (run_eval(epoch)) {
        result.early_stopped = true;
        stop = true;
      }
    }
  }
  result.total_steps = step;
  return result;
}

FdCheckResult finite_difference_check(const Parameters& params,
                                      const EncodedExample& example,
                                      int probe_count, double h,
                                      std::uint64_t seed,
                                      double label_smoothing) {
  if (probe_count < 1) throw ValidationError("probe_count must be >= 1");
  if (h <= 0.0) throw ValidationError("h must be positive");

  Parameters work = params;  // perturbed copy; const input untouched
  Parameters grads = work.zeros_like();
  const auto view = shifted_labels(example);
  int supervised = 0;
  for (auto m : view.mask) supervised += m ? 1 : 0;
  {
    ForwardCache cache;
    const Matrix logits = model_forward(work, example, Mode::kEval, nullptr, &cache);
    Matrix dlogits;
    masked_cross_entropy_grad(logits, view.labels, view.mask, label_smoothing,
                              1.0 / supervised, dlogits);
    model_backward(work, example, cache, dlogits, grads);
  }
  const auto loss_at = [&]() {
    const Matrix logits = model_forward(work, example, Mode::kEval);
    return masked_cross_entropy(logits, view.labels, view.mask, label_smoothing);
  };

  auto rng = Rng::derive(seed, {fnv1a64("fdcheck")});
  const std::size_t n_coords = work.coordinate_count();

  FdCheckResult out;
  out.probes = probe_count;
  out.h = h;
  for (int p = 0; p < probe_count; ++p) {
    const auto flat = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(n_coords - 1)));
    double& coord = work.coordinate(flat);
    const double original = coord;
    coord = original + h;
    const double up = loss_at();
    coord = original - h;
    const double down = loss_at();
    coord = original;

    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads.coordinate(flat);
    const double denom = std::max(1.0, std::abs(analytic) + std::abs(numeric));
    out.max_rel_err = std::max(out.max_rel_err, std::abs(analytic - numeric) / denom);
  }
  return out;
}

}  // namespace ctxmt

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ctxmt/contextizer.hpp"
#include "ctxmt/corpus.hpp"
#include "ctxmt/model.hpp"
#include "ctxmt/tokenizer.hpp"

namespace ctxmt {

struct TrainConfig {
  int batch_size = 32;  // sentences per step
  // Adam moments per the usual transformer recipe; inverse-sqrt schedule
  // lr(step) = lr_scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double lr_scale = 1.0;
  int warmup_steps = 400;
  double label_smoothing = 0.1;  // 0 disables
  double grad_clip = 1.0;        // global-norm clip, 0 disables
  // Per-step exponential moving average of the weights; evaluation and the
  // returned checkpoint use the averaged weights. 0 disables.
  double ema_decay = 0.0;
  int max_epochs = 20;
  int patience = 5;       // evals without dev improvement before stopping
  int eval_interval = 0;  // in steps; 0 = once per epoch
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossParts {
  double sum = 0.0;  // summed smoothed NLL over supervised positions
  int tokens = 0;
  double mean() const { return tokens > 0 ? sum / tokens : 0.0; }
};

// Mean over mask-true positions of label-smoothed negative log-likelihood.
// logits rows align with label positions (decoder input shifted left by one);
// mask-false positions contribute exactly zero to value and gradient.
double masked_cross_entropy(const Matrix& logits, std::span<const int> labels,
                            std::span<const std::uint8_t> label_mask,
                            double label_smoothing);

LossParts masked_cross_entropy_parts(const Matrix& logits,
                                     std::span<const int> labels,
                                     std::span<const std::uint8_t> label_mask,
                                     double label_smoothing);

// As above, also filling dlogits with d(sum)/d(logits) * grad_scale. Rows at
// mask-false positions stay exactly zero.
LossParts masked_cross_entropy_grad(const Matrix& logits,
                                    std::span<const int> labels,
                                    std::span<const std::uint8_t> label_mask,
                                    double label_smoothing, double grad_scale,
                                    Matrix& dlogits);

// Label view of an example: labels[t] = target_ids[t+1], aligned to logits.
struct LabelView {
  std::span<const int> labels;
  std::span<const std::uint8_t> mask;
};
LabelView shifted_labels(const EncodedExample& example);

// Loss over a batch (token-mean) plus accumulated parameter gradients.
// Deterministic given the dropout rng stream.
LossParts batch_loss_and_grad(const Parameters& params,
                              std::span<const EncodedExample> batch,
                              double label_smoothing, Mode mode, Rng* dropout_rng,
                              Parameters& grads, bool use_coattmask = true);

struct AdamState {
  Parameters m;
  Parameters v;
  std::int64_t step = 0;

  explicit AdamState(const ModelConfig& cfg) : m(cfg), v(cfg) {}
};

double noam_lr(const TrainConfig& cfg, int d_model, std::int64_t step);
// One update; also applies global-norm clipping when configured.
void adam_step(Parameters& params, Parameters& grads, AdamState& state,
               const TrainConfig& cfg, double lr);

struct TrainLogEntry {
  std::int64_t step = 0;
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  std::optional<double> marker_accuracy;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  Parameters best_params;
  double best_dev_loss = 0.0;
  std::int64_t best_step = 0;
  std::int64_t total_steps = 0;
  std::vector<TrainLogEntry> log;
  bool early_stopped = false;
  bool diverged = false;
};

using TrainLogCallback = std::function<void(const TrainLogEntry&)>;

// Masked-loss optimization until convergence on the dev split (early stopping
// by patience) or max_epochs. With ctx_cfg.dynamic, per-example context sizes
// are resampled every epoch. Single-threaded and deterministic under a fixed
// seed. A non-finite training loss aborts with the best checkpoint so far.
TrainResult train(const CorpusSet& corpus, const ContextConfig& ctx_cfg,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Vocabulary& vocab, const TrainLogCallback& on_eval = {});

// Dev-split evaluation: token-mean loss, plus politeness-marker accuracy
// (teacher-forced argmax at the marker position) when the vocabulary carries
// the synthetic markers.
struct EvalMetrics {
  double loss = 0.0;
  std::optional<double> marker_accuracy;
};
EvalMetrics evaluate(const Parameters& params,
                     std::span<const EncodedExample> dataset,
                     double label_smoothing, const Vocabulary& vocab);

struct FdCheckResult {
  double max_rel_err = 0.0;
  int probes = 0;
  double h = 0.0;
};

// Compares the analytic gradient of the masked loss against central finite
// differences (f(x+h) - f(x-h)) / 2h on randomly probed coordinates.
// Relative error uses max(1, |analytic| + |numeric|) as denominator, so it is
// an absolute bound for tiny gradients. Dropout off (eval-mode graph).
FdCheckResult finite_difference_check(const Parameters& params,
                                      const EncodedExample& example,
                                      int probe_count, double h,
                                      std::uint64_t seed,
                                      double label_smoothing = 0.0);

}  // namespace ctxmt

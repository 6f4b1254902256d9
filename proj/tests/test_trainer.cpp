#include <doctest.h>

#include <cmath>

#include "ctxmt/contextizer.hpp"
#include "ctxmt/error.hpp"
#include "ctxmt/model.hpp"
#include "ctxmt/synthetic.hpp"
#include "ctxmt/tokenizer.hpp"
#include "ctxmt/trainer.hpp"

using namespace ctxmt;

namespace {

struct Tiny {
  CorpusSet corpus = generate_synthetic_corpus(SynthSpec::preset("tiny"), 23);
  Vocabulary vocab = build_vocab(corpus, 1, TargetMode::kWord);

  ModelConfig model(int d_model = 16, int layers = 1, int heads = 2,
                    int d_ff = 32) const {
    ModelConfig mc;
    mc.layers_enc = layers;
    mc.layers_dec = layers;
    mc.heads = heads;
    mc.d_model = d_model;
    mc.d_ff = d_ff;
    mc.dropout = 0.0;
    mc.vocab_size = vocab.size();
    return mc;
  }
};

bool params_equal(const Parameters& a, const Parameters& b) {
  const auto aa = a.arrays();
  const auto ba = b.arrays();
  for (std::size_t i = 0; i < aa.size(); ++i)
    if (aa[i].second->data != ba[i].second->data) return false;
  return true;
}

}  // namespace

TEST_CASE("uniform logits with no smoothing give loss ln V") {
  const int v = 37;
  Matrix logits(5, v);  // all zeros -> uniform distribution
  std::vector<int> labels = {1, 5, 9, 2, 30};
  std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1};
  const double loss = masked_cross_entropy(logits, labels, mask, 0.0);
  CHECK(loss == doctest::Approx(std::log(v)).epsilon(1e-12));
}

TEST_CASE("loss ignores gold ids at mask-false positions") {
  auto rng = Rng(4);
  Matrix logits(6, 20);
  for (auto& x : logits.data) x = rng.uniform_sym(2.0);
  std::vector<int> labels = {1, 2, 3, 4, 5, 6};
  std::vector<std::uint8_t> mask = {0, 1, 0, 1, 1, 0};
  const double base = masked_cross_entropy(logits, labels, mask, 0.1);
  std::vector<int> mangled = labels;
  mangled[0] = 17;
  mangled[2] = 0;
  mangled[5] = 19;
  CHECK(masked_cross_entropy(logits, mangled, mask, 0.1) == base);
}

TEST_CASE("gradient at mask-false positions is exactly zero") {
  auto rng = Rng(9);
  Matrix logits(4, 12);
  for (auto& x : logits.data) x = rng.uniform_sym(1.5);
  std::vector<int> labels = {3, 4, 5, 6};
  std::vector<std::uint8_t> mask = {1, 0, 1, 0};
  Matrix dlogits;
  masked_cross_entropy_grad(logits, labels, mask, 0.1, 1.0, dlogits);
  for (int c = 0; c < 12; ++c) {
    CHECK(dlogits.at(1, c) == 0.0);
    CHECK(dlogits.at(3, c) == 0.0);
  }
  // supervised rows: gradient sums to ~0 (softmax minus a distribution)
  for (int r : {0, 2}) {
    double s = 0.0;
    for (int c = 0; c < 12; ++c) s += dlogits.at(r, c);
    CHECK(s == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("all-false loss mask is an error") {
  Matrix logits(2, 8);
  std::vector<int> labels = {1, 2};
  std::vector<std::uint8_t> mask = {0, 0};
  CHECK_THROWS_AS(masked_cross_entropy(logits, labels, mask, 0.0), ValidationError);
}

TEST_CASE("label smoothing matches a direct evaluation") {
  Matrix logits(1, 4);
  logits.at(0, 0) = 0.5;
  logits.at(0, 1) = -0.3;
  logits.at(0, 2) = 1.7;
  logits.at(0, 3) = 0.0;
  std::vector<int> labels = {2};
  std::vector<std::uint8_t> mask = {1};
  const double eps = 0.2;
  // direct: -(1-eps) log p_gold - eps/V sum log p
  double denom = 0.0;
  for (int c = 0; c < 4; ++c) denom += std::exp(logits.at(0, c));
  double direct = -(1.0 - eps) * (logits.at(0, 2) - std::log(denom));
  for (int c = 0; c < 4; ++c)
    direct -= eps / 4 * (logits.at(0, c) - std::log(denom));
  CHECK(masked_cross_entropy(logits, labels, mask, eps) ==
        doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("an Adam step with zero gradient leaves parameters unchanged") {
  Tiny t;
  auto rng = Rng(2);
  auto params = Parameters::init(t.model(), rng);
  const auto before = params;
  auto grads = params.zeros_like();
  AdamState state(t.model());
  TrainConfig cfg;
  adam_step(params, grads, state, cfg, 0.01);
  CHECK(params_equal(params, before));
}

TEST_CASE("inverse-sqrt schedule warms up then decays") {
  TrainConfig cfg;
  cfg.warmup_steps = 100;
  const int d = 64;
  CHECK(noam_lr(cfg, d, 50) < noam_lr(cfg, d, 100));
  CHECK(noam_lr(cfg, d, 400) < noam_lr(cfg, d, 100));
  CHECK(noam_lr(cfg, d, 100) ==
        doctest::Approx(1.0 / std::sqrt(64.0) / 10.0).epsilon(1e-12));
}

TEST_CASE("batch loss equals the token-weighted mean of example losses") {
  Tiny t;
  auto rng = Rng(8);
  const auto params = Parameters::init(t.model(), rng);
  ContextConfig cfg;
  cfg.k_src = 1;
  const auto dataset = make_dataset(t.corpus.train, cfg, t.vocab);
  const std::span<const EncodedExample> batch(dataset.data(), 4);

  auto grads = params.zeros_like();
  const auto parts =
      batch_loss_and_grad(params, batch, 0.0, Mode::kEval, nullptr, grads);

  LossParts direct;
  for (const auto& ex : batch) {
    const Matrix logits = model_forward(params, ex, Mode::kEval);
    const auto view = shifted_labels(ex);
    const auto p = masked_cross_entropy_parts(logits, view.labels, view.mask, 0.0);
    direct.sum += p.sum;
    direct.tokens += p.tokens;
  }
  CHECK(parts.mean() == doctest::Approx(direct.mean()).epsilon(1e-12));
  CHECK(parts.tokens == direct.tokens);
}

TEST_CASE("evaluation loss is invariant to dataset order") {
  Tiny t;
  auto rng = Rng(10);
  const auto params = Parameters::init(t.model(), rng);
  ContextConfig cfg;
  cfg.k_src = 1;
  auto dataset = make_dataset(t.corpus.dev, cfg, t.vocab);
  const auto forward_metrics = evaluate(params, dataset, 0.1, t.vocab);
  std::reverse(dataset.begin(), dataset.end());
  const auto reversed_metrics = evaluate(params, dataset, 0.1, t.vocab);
  CHECK(forward_metrics.loss ==
        doctest::Approx(reversed_metrics.loss).epsilon(1e-12));
}

TEST_CASE("zero-context training step matches the plain baseline path") {
  Tiny t;
  auto rng = Rng(12);
  const auto params = Parameters::init(t.model(), rng);
  ContextConfig cfg;  // 1-1
  const auto dataset = make_dataset(t.corpus.train, cfg, t.vocab);
  const std::span<const EncodedExample> batch(dataset.data(), 6);

  auto g1 = params.zeros_like();
  auto g2 = params.zeros_like();
  const auto l1 = batch_loss_and_grad(params, batch, 0.1, Mode::kEval, nullptr, g1,
                                      /*use_coattmask=*/true);
  const auto l2 = batch_loss_and_grad(params, batch, 0.1, Mode::kEval, nullptr, g2,
                                      /*use_coattmask=*/false);
  CHECK(l1.sum == doctest::Approx(l2.sum).epsilon(1e-12));
  CHECK(params_equal(g1, g2));
}

TEST_CASE("finite differences confirm the analytic gradient") {
  Tiny t;
  auto rng = Rng(3);
  const auto params = Parameters::init(t.model(), rng);
  ContextConfig cfg;
  cfg.k_src = 2;
  cfg.speaker_tags = true;
  cfg.scene_tag = true;
  const auto dataset = make_dataset(t.corpus.train, cfg, t.vocab);
  const auto& ex = dataset[2];

  const auto result = finite_difference_check(params, ex, 60, 1e-5, 77);
  CHECK(result.max_rel_err < 1e-4);

  // widening h should not reduce the truncation-dominated error
  const auto wide = finite_difference_check(params, ex, 60, 1e-4, 77);
  CHECK(wide.max_rel_err >= result.max_rel_err * 0.5);
}

TEST_CASE("backward is linear: zero output gradient, zero parameter gradient") {
  Tiny t;
  auto rng = Rng(6);
  const auto params = Parameters::init(t.model(), rng);
  ContextConfig cfg;
  const auto dataset = make_dataset(t.corpus.train, cfg, t.vocab);
  const auto& ex = dataset[0];

  ForwardCache cache;
  const Matrix logits = model_forward(params, ex, Mode::kEval, nullptr, &cache);
  auto grads = params.zeros_like();
  Matrix zero_dlogits(logits.rows, logits.cols);
  model_backward(params, ex, cache, zero_dlogits, grads);
  for (const auto& [name, m] : grads.arrays())
    for (double v : m->data) CHECK(v == 0.0);
}

TEST_CASE("the lookup path leaves unused embedding rows at exactly zero") {
  // With the tied output projection every row can receive a dlogits^T H term,
  // so drive backward with a gradient confined to one used label column: any
  // remaining gradient on unused rows would have to come from the lookup
  // path, and there must be none.
  Tiny t;
  auto rng = Rng(6);
  const auto params = Parameters::init(t.model(), rng);
  ContextConfig cfg;
  const auto dataset = make_dataset(t.corpus.train, cfg, t.vocab);
  const auto& ex = dataset[0];

  std::vector<std::uint8_t> used(static_cast<std::size_t>(t.vocab.size()), 0);
  for (int id : ex.source_ids) used[static_cast<std::size_t>(id)] = 1;
  for (int id : ex.target_ids) used[static_cast<std::size_t>(id)] = 1;

  ForwardCache cache;
  const Matrix logits = model_forward(params, ex, Mode::kEval, nullptr, &cache);
  const auto view = shifted_labels(ex);
  int row = -1;
  for (std::size_t p = 0; p < view.mask.size(); ++p)
    if (view.mask[p]) {
      row = static_cast<int>(p);
      break;
    }
  REQUIRE(row >= 0);
  Matrix dlogits(logits.rows, logits.cols);
  dlogits.at(row, view.labels[static_cast<std::size_t>(row)]) = 1.0;

  auto grads = params.zeros_like();
  model_backward(params, ex, cache, dlogits, grads);
  int unused_rows = 0;
  for (int id = 0; id < t.vocab.size(); ++id) {
    if (used[static_cast<std::size_t>(id)]) continue;
    unused_rows += 1;
    for (int c = 0; c < params.config.d_model; ++c)
      CHECK(grads.embedding.at(id, c) == 0.0);
  }
  CHECK(unused_rows > 0);
}

TEST_CASE("training reduces the loss on a tiny corpus and is deterministic") {
  Tiny t;
  ContextConfig ctx;
  ctx.k_src = 1;
  ctx.speaker_tags = true;
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 6;
  tc.patience = 10;
  tc.warmup_steps = 20;
  tc.seed = 5;
  const auto r1 = train(t.corpus, ctx, t.model(24, 1, 2, 48), tc, t.vocab);
  REQUIRE(r1.log.size() >= 2);
  CHECK(r1.log.back().dev_loss < r1.log.front().dev_loss);
  CHECK(r1.best_dev_loss <= r1.log.front().dev_loss);

  const auto r2 = train(t.corpus, ctx, t.model(24, 1, 2, 48), tc, t.vocab);
  CHECK(r1.best_dev_loss == r2.best_dev_loss);
  CHECK(params_equal(r1.best_params, r2.best_params));
}

TEST_CASE("patience stops training and keeps the earlier best checkpoint") {
  Tiny t;
  ContextConfig ctx;  // 1-1
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 50;
  tc.patience = 3;
  tc.lr_scale = 1e-12;  // effectively frozen: dev loss plateaus immediately
  tc.seed = 2;
  const auto result = train(t.corpus, ctx, t.model(), tc, t.vocab);
  CHECK(result.early_stopped);
  CHECK(result.log.size() == 4);  // first eval + patience more
  CHECK(result.best_step == result.log.front().step);
  CHECK(result.best_step < result.total_steps);
}

TEST_CASE("training aborts on divergence and returns the best checkpoint") {
  Tiny t;
  ContextConfig ctx;
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 10;
  tc.patience = 10;
  tc.lr_scale = 1e200;  // overflows attention scores on the next forward
  tc.grad_clip = 0.0;
  tc.seed = 2;
  const auto result = train(t.corpus, ctx, t.model(), tc, t.vocab);
  CHECK(result.diverged);
  CHECK(result.best_params.all_finite());
}

#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "ctxmt/contextizer.hpp"
#include "ctxmt/metrics.hpp"
#include "ctxmt/model.hpp"
#include "ctxmt/rng.hpp"
#include "ctxmt/synthetic.hpp"
#include "ctxmt/tokenizer.hpp"
#include "ctxmt/trainer.hpp"

namespace {

using namespace ctxmt;

struct BenchSetup {
  CorpusSet corpus;
  Vocabulary vocab;
  Parameters params;
  std::vector<EncodedExample> dataset;

  explicit BenchSetup(int d_model = 64)
      : corpus(generate_synthetic_corpus(
            [] {
              SynthSpec spec;
              spec.train_docs = 20;
              spec.dev_docs = 2;
              spec.test_docs = 2;
              return spec;
            }(),
            7)),
        vocab(build_vocab(corpus, 1, TargetMode::kWord)),
        params([&] {
          ModelConfig mc;
          mc.d_model = d_model;
          mc.d_ff = d_model * 2;
          mc.heads = 4;
          mc.layers_enc = 2;
          mc.layers_dec = 2;
          mc.vocab_size = vocab.size();
          auto rng = Rng(3);
          return Parameters::init(mc, rng);
        }()) {
    ContextConfig cfg;
    cfg.k_src = 4;
    cfg.speaker_tags = true;
    cfg.scene_tag = true;
    dataset = make_dataset(corpus.train, cfg, vocab);
  }
};

const BenchSetup& setup() {
  static const BenchSetup s;
  return s;
}

void BM_ScaledDotAttention(benchmark::State& state) {
  const int seq = static_cast<int>(state.range(0));
  const int dh = 16;
  Matrix q(seq, dh), k(seq, dh), v(seq, dh);
  auto rng = Rng(1);
  for (auto* m : {&q, &k, &v})
    for (auto& x : m->data) x = rng.uniform_sym(1.0);
  const auto mask = AttentionMask::causal(seq);
  Matrix out;
  for (auto _ : state) {
    attention(q, k, v, mask, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetComplexityN(seq);
}
BENCHMARK(BM_ScaledDotAttention)->RangeMultiplier(2)->Range(8, 128)->Complexity();

void BM_EncoderForward(benchmark::State& state) {
  const auto& s = setup();
  const auto& ex = s.dataset[41];
  for (auto _ : state) {
    const Matrix enc = encode_source(s.params, ex.source_ids, {}, Mode::kEval);
    benchmark::DoNotOptimize(enc.data.data());
  }
}
BENCHMARK(BM_EncoderForward);

void BM_TeacherForcedForward(benchmark::State& state) {
  const auto& s = setup();
  const auto& ex = s.dataset[41];
  for (auto _ : state) {
    const Matrix logits = model_forward(s.params, ex, Mode::kEval);
    benchmark::DoNotOptimize(logits.data.data());
  }
}
BENCHMARK(BM_TeacherForcedForward);

void BM_TrainStep(benchmark::State& state) {
  const auto& s = setup();
  const std::span<const EncodedExample> batch(s.dataset.data(), 16);
  auto grads = s.params.zeros_like();
  auto rng = Rng(5);
  for (auto _ : state) {
    for (auto& [name, g] : grads.arrays()) g->zero();
    const auto parts =
        batch_loss_and_grad(s.params, batch, 0.1, Mode::kTrain, &rng, grads);
    benchmark::DoNotOptimize(parts.sum);
  }
}
BENCHMARK(BM_TrainStep);

void BM_GreedyGenerate(benchmark::State& state) {
  const auto& s = setup();
  const auto& ex = s.dataset[41];
  GenerateOptions opts;
  opts.max_len = 16;
  for (auto _ : state) {
    const auto out = generate(s.params, ex.source_ids, ex.src_context_mask, opts);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_GreedyGenerate);

void BM_TokenizeCharacterTarget(benchmark::State& state) {
  const std::string text =
      "明日の午後5時に伺いますのでよろしくお願い致します頂いております";
  for (auto _ : state) {
    const auto tokens = tokenize(text, Side::kTarget, TargetMode::kCharacter);
    benchmark::DoNotOptimize(tokens.data());
  }
}
BENCHMARK(BM_TokenizeCharacterTarget);

void BM_BleuCorpus(benchmark::State& state) {
  auto rng = Rng(11);
  std::vector<std::string> hyps, refs;
  for (int i = 0; i < 200; ++i) {
    auto make = [&] {
      std::string s;
      for (int len = rng.uniform_int(5, 30); len > 0; --len)
        s += static_cast<char>('a' + rng.uniform_int(0, 7));
      return s;
    };
    hyps.push_back(make());
    refs.push_back(make());
  }
  for (auto _ : state) {
    const auto score = bleu(hyps, refs, {});
    benchmark::DoNotOptimize(score.score);
  }
}
BENCHMARK(BM_BleuCorpus);

}  // namespace

BENCHMARK_MAIN();

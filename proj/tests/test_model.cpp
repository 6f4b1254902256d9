#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ctxmt/checkpoint.hpp"
#include "ctxmt/contextizer.hpp"
#include "ctxmt/error.hpp"
#include "ctxmt/model.hpp"
#include "ctxmt/synthetic.hpp"
#include "ctxmt/tokenizer.hpp"

using namespace ctxmt;

namespace {

struct Fixture {
  CorpusSet corpus = generate_synthetic_corpus(SynthSpec::preset("tiny"), 13);
  Vocabulary vocab = build_vocab(corpus, 1, TargetMode::kWord);

  ModelConfig config(int d_model = 32, int layers = 2, int heads = 2,
                     int d_ff = 48) const {
    ModelConfig mc;
    mc.layers_enc = layers;
    mc.layers_dec = layers;
    mc.heads = heads;
    mc.d_model = d_model;
    mc.d_ff = d_ff;
    mc.dropout = 0.1;
    mc.vocab_size = vocab.size();
    return mc;
  }

  Parameters params(std::uint64_t seed = 5) const {
    auto rng = Rng(seed);
    return Parameters::init(config(), rng);
  }

  std::vector<EncodedExample> dataset(const ContextConfig& cfg) const {
    return make_dataset(corpus.train, cfg, vocab);
  }
};

ContextConfig ctx_with_context() {
  ContextConfig cfg;
  cfg.k_src = 2;
  cfg.speaker_tags = true;
  cfg.scene_tag = true;
  return cfg;
}

double max_rel_diff(const Matrix& a, const Matrix& b) {
  REQUIRE(a.rows == b.rows);
  REQUIRE(a.cols == b.cols);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), 1e-12});
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("attention matches a step-by-step softmax oracle on a hand case") {
  // 2 queries x 3 keys, head dim 2, small integer entries
  Matrix q(2, 2), k(3, 2), v(3, 2);
  q.at(0, 0) = 1;  q.at(0, 1) = 0;
  q.at(1, 0) = -1; q.at(1, 1) = 2;
  k.at(0, 0) = 1;  k.at(0, 1) = 1;
  k.at(1, 0) = 0;  k.at(1, 1) = 2;
  k.at(2, 0) = 2;  k.at(2, 1) = -1;
  v.at(0, 0) = 1;  v.at(0, 1) = 2;
  v.at(1, 0) = 3;  v.at(1, 1) = 4;
  v.at(2, 0) = 5;  v.at(2, 1) = 6;

  const auto mask = AttentionMask::all_visible(2, 3);
  Matrix out, weights;
  attention(q, k, v, mask, out, &weights);

  const double scale = 1.0 / std::sqrt(2.0);
  for (int qi = 0; qi < 2; ++qi) {
    // independent evaluation: raw dots, exp, normalize, weighted sum
    double scores[3];
    for (int kj = 0; kj < 3; ++kj)
      scores[kj] = (q.at(qi, 0) * k.at(kj, 0) + q.at(qi, 1) * k.at(kj, 1)) * scale;
    double denom = 0.0;
    for (double s : scores) denom += std::exp(s);
    for (int kj = 0; kj < 3; ++kj) {
      const double expected = std::exp(scores[kj]) / denom;
      CHECK(weights.at(qi, kj) == doctest::Approx(expected).epsilon(1e-12));
    }
    for (int c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (int kj = 0; kj < 3; ++kj) acc += std::exp(scores[kj]) / denom * v.at(kj, c);
      CHECK(out.at(qi, c) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention with identical keys gives uniform weights") {
  Matrix q(1, 4), k(3, 4), v(3, 2);
  for (int c = 0; c < 4; ++c) {
    q.at(0, c) = 0.3 * c;
    for (int r = 0; r < 3; ++r) k.at(r, c) = 1.0;
  }
  for (int r = 0; r < 3; ++r) v.at(r, 0) = r;
  Matrix out, weights;
  attention(q, k, v, AttentionMask::all_visible(1, 3), out, &weights);
  for (int kj = 0; kj < 3; ++kj)
    CHECK(weights.at(0, kj) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("single visible key receives weight exactly 1") {
  Matrix q(2, 3), k(4, 3), v(4, 3);
  for (std::size_t i = 0; i < q.size(); ++i) q.data[i] = 0.1 * static_cast<double>(i);
  for (std::size_t i = 0; i < k.size(); ++i) k.data[i] = -0.2 * static_cast<double>(i);
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<double>(i);
  std::vector<std::uint8_t> key_visible = {0, 0, 1, 0};
  const auto mask = AttentionMask::broadcast_keys(2, key_visible);
  Matrix out, weights;
  attention(q, k, v, mask, out, &weights);
  for (int qi = 0; qi < 2; ++qi) {
    CHECK(weights.at(qi, 2) == 1.0);
    for (int kj : {0, 1, 3}) CHECK(weights.at(qi, kj) == 0.0);
    for (int c = 0; c < 3; ++c) CHECK(out.at(qi, c) == v.at(2, c));
  }
}

TEST_CASE("attention rejects a query row with no visible key") {
  Matrix q(1, 2), k(2, 2), v(2, 2);
  std::vector<std::uint8_t> none = {0, 0};
  Matrix out;
  CHECK_THROWS_AS(attention(q, k, v, AttentionMask::broadcast_keys(1, none), out),
                  ValidationError);
}

TEST_CASE("coatt_mask: visible iff non-PAD and non-context") {
  std::vector<std::uint8_t> ctx = {1, 1, 0, 0};
  std::vector<std::uint8_t> pad = {0, 0, 0, 1};
  const auto visible = coatt_mask(pad, ctx);
  CHECK(visible == std::vector<std::uint8_t>{0, 0, 1, 0});

  // all-false context with no padding equals all-visible
  std::vector<std::uint8_t> clear = {0, 0, 0, 0};
  CHECK(coatt_mask({}, clear) == std::vector<std::uint8_t>{1, 1, 1, 1});

  std::vector<std::uint8_t> all_ctx = {1, 1};
  CHECK_THROWS_AS(coatt_mask({}, all_ctx), ValidationError);
}

TEST_CASE("encoder is deterministic in eval mode and shape-correct") {
  Fixture f;
  const auto params = f.params();
  const auto dataset = f.dataset(ctx_with_context());
  const auto& ex = dataset[3];
  const Matrix a = encode_source(params, ex.source_ids, {}, Mode::kEval);
  const Matrix b = encode_source(params, ex.source_ids, {}, Mode::kEval);
  CHECK(a.rows == static_cast<int>(ex.source_ids.size()));
  CHECK(a.cols == params.config.d_model);
  CHECK(max_rel_diff(a, b) == 0.0);
}

TEST_CASE("PAD tail does not affect non-PAD encoder states") {
  Fixture f;
  const auto params = f.params();
  const auto dataset = f.dataset(ctx_with_context());
  const auto& ex = dataset[2];

  const Matrix plain = encode_source(params, ex.source_ids, {}, Mode::kEval);

  auto padded_ids = ex.source_ids;
  std::vector<std::uint8_t> pad_mask(padded_ids.size(), 0);
  for (int extra = 0; extra < 3; ++extra) {
    padded_ids.push_back(kPadId);
    pad_mask.push_back(1);
  }
  const Matrix padded = encode_source(params, padded_ids, pad_mask, Mode::kEval);
  for (int r = 0; r < plain.rows; ++r)
    for (int c = 0; c < plain.cols; ++c)
      CHECK(padded.at(r, c) == doctest::Approx(plain.at(r, c)).epsilon(1e-12));
}

TEST_CASE("zero-context forward equals the plain baseline path exactly") {
  Fixture f;
  const auto params = f.params();
  ContextConfig agnostic;  // 1-1
  const auto dataset = f.dataset(agnostic);
  for (std::size_t i = 0; i < 5; ++i) {
    const Matrix with_mask = model_forward(params, dataset[i], Mode::kEval, nullptr,
                                           nullptr, /*use_coattmask=*/true);
    const Matrix plain = model_forward(params, dataset[i], Mode::kEval, nullptr,
                                       nullptr, /*use_coattmask=*/false);
    CHECK(max_rel_diff(with_mask, plain) <= 1e-6);
  }
}

TEST_CASE("cross-attention puts exactly zero mass on context positions") {
  Fixture f;
  const auto params = f.params();
  const auto dataset = f.dataset(ctx_with_context());
  ForwardCache cache;
  int checked = 0;
  for (const auto& ex : dataset) {
    if (ex.used_ctx.source == 0) continue;
    model_forward(params, ex, Mode::kEval, nullptr, &cache);
    CHECK(cache.cross_context_mass == 0.0);
    for (double m : cache.cross_context_mass_per_head) CHECK(m == 0.0);
    checked += 1;
  }
  CHECK(checked > 10);
}

TEST_CASE("decoder is causal: later target tokens cannot change earlier logits") {
  Fixture f;
  const auto params = f.params();
  const auto dataset = f.dataset(ctx_with_context());
  auto ex = dataset[5];
  const Matrix base = model_forward(params, ex, Mode::kEval);

  const std::size_t t = ex.target_ids.size() - 2;  // perturb a late input token
  auto perturbed = ex;
  perturbed.target_ids[t] = (ex.target_ids[t] + 1) % f.vocab.size();
  const Matrix changed = model_forward(params, perturbed, Mode::kEval);
  for (int row = 0; row < static_cast<int>(t); ++row)
    for (int c = 0; c < base.cols; ++c)
      CHECK(base.at(row, c) == doctest::Approx(changed.at(row, c)).epsilon(1e-12));
}

TEST_CASE("context reaches the decoder only through encoder self-attention") {
  Fixture f;
  const auto params = f.params();
  const auto dataset = f.dataset(ctx_with_context());
  const EncodedExample* with_ctx = nullptr;
  for (const auto& ex : dataset)
    if (ex.used_ctx.source >= 1) {
      with_ctx = &ex;
      break;
    }
  REQUIRE(with_ctx != nullptr);
  const auto& ex = *with_ctx;
  const std::vector<int> dec_input(ex.target_ids.begin(), ex.target_ids.end() - 1);
  const auto visible = coatt_mask({}, ex.src_context_mask);

  const Matrix enc = encode_source(params, ex.source_ids, {}, Mode::kEval);
  const Matrix base =
      decode_teacher_forced(params, enc, visible, dec_input, {}, Mode::kEval);

  // Perturbing a context ENCODER OUTPUT row changes nothing downstream.
  Matrix enc_poked = enc;
  int ctx_pos = -1;
  for (std::size_t p = 0; p < ex.src_context_mask.size(); ++p)
    if (ex.src_context_mask[p]) ctx_pos = static_cast<int>(p);
  REQUIRE(ctx_pos >= 0);
  for (int c = 0; c < enc_poked.cols; ++c) enc_poked.at(ctx_pos, c) += 7.5;
  const Matrix poked =
      decode_teacher_forced(params, enc_poked, visible, dec_input, {}, Mode::kEval);
  CHECK(max_rel_diff(base, poked) == 0.0);

  // Perturbing a context ENCODER INPUT token does change the logits.
  auto ex2 = ex;
  ex2.source_ids[static_cast<std::size_t>(ctx_pos)] =
      (ex.source_ids[static_cast<std::size_t>(ctx_pos)] + 1) % f.vocab.size();
  const Matrix enc2 = encode_source(params, ex2.source_ids, {}, Mode::kEval);
  const Matrix changed =
      decode_teacher_forced(params, enc2, visible, dec_input, {}, Mode::kEval);
  CHECK(max_rel_diff(base, changed) > 1e-9);
}

TEST_CASE("forward outputs are finite under random init") {
  Fixture f;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const auto params = f.params(seed);
    const auto dataset = f.dataset(ctx_with_context());
    const Matrix logits = model_forward(params, dataset[7], Mode::kEval);
    CHECK(all_finite(logits));
  }
}

TEST_CASE("train-mode dropout is deterministic under a fixed rng stream") {
  Fixture f;
  const auto params = f.params();
  const auto dataset = f.dataset(ctx_with_context());
  auto rng1 = Rng(42);
  auto rng2 = Rng(42);
  const Matrix a = model_forward(params, dataset[1], Mode::kTrain, &rng1);
  const Matrix b = model_forward(params, dataset[1], Mode::kTrain, &rng2);
  CHECK(max_rel_diff(a, b) == 0.0);
  CHECK_THROWS_AS(model_forward(params, dataset[1], Mode::kTrain, nullptr),
                  ValidationError);
}

TEST_CASE("checkpoint round-trip is byte-exact") {
  Fixture f;
  Checkpoint ckpt;
  ckpt.params = f.params(11);
  ckpt.vocab_hash = f.vocab.hash();
  ckpt.context = ctx_with_context();

  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "ctxmt_ckpt_test";
  fs::create_directories(dir);
  const auto p1 = dir / "a.ckpt";
  const auto p2 = dir / "b.ckpt";
  save_checkpoint(ckpt, p1);
  const auto loaded = load_checkpoint(p1);
  CHECK(loaded.vocab_hash == ckpt.vocab_hash);
  CHECK(loaded.context.k_src == ckpt.context.k_src);
  CHECK(loaded.context.speaker_tags == ckpt.context.speaker_tags);
  CHECK(loaded.params.config.d_model == ckpt.params.config.d_model);
  save_checkpoint(loaded, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  CHECK_FALSE(b1.empty());

  // corrupt magic
  std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
  bad << "NOTACKPT" << b1.substr(8);
  bad.close();
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), ValidationError);
}

TEST_CASE("generate emits EOS immediately when EOS dominates the logits") {
  Fixture f;
  auto params = Parameters(f.config());
  // dec_final with zero gain and bias v makes every decoder output row equal
  // v; setting the EOS embedding to v makes EOS the argmax everywhere.
  for (int c = 0; c < params.config.d_model; ++c) {
    params.dec_final.bias.at(0, c) = c % 3 == 0 ? 1.0 : -0.5;
    params.embedding.at(kEosId, c) = params.dec_final.bias.at(0, c);
  }
  const auto dataset = f.dataset(ctx_with_context());
  const auto& ex = dataset[1];
  const auto out = generate(params, ex.source_ids, ex.src_context_mask, {});
  CHECK(out == std::vector<int>{kEosId});
}

TEST_CASE("greedy equals beam width 1") {
  Fixture f;
  const auto params = f.params(21);
  const auto dataset = f.dataset(ctx_with_context());
  for (std::size_t i : {0UL, 3UL, 9UL}) {
    GenerateOptions greedy;
    greedy.max_len = 24;
    GenerateOptions beam1;
    beam1.max_len = 24;
    beam1.beam_width = 1;
    const auto a = generate(params, dataset[i].source_ids,
                            dataset[i].src_context_mask, greedy);
    const auto b = generate(params, dataset[i].source_ids,
                            dataset[i].src_context_mask, beam1);
    CHECK(a == b);
  }
}

TEST_CASE("beam search is deterministic and bounded by max_len") {
  Fixture f;
  const auto params = f.params(22);
  const auto dataset = f.dataset(ctx_with_context());
  GenerateOptions opts;
  opts.max_len = 16;
  opts.beam_width = 3;
  const auto a =
      generate(params, dataset[4].source_ids, dataset[4].src_context_mask, opts);
  const auto b =
      generate(params, dataset[4].source_ids, dataset[4].src_context_mask, opts);
  CHECK(a == b);
  CHECK(a.size() <= 15);  // total target length (with BOS) capped at 16
}

TEST_CASE("forced prefix is consumed, not emitted") {
  Fixture f;
  const auto params = f.params(23);
  const auto dataset = f.dataset(ctx_with_context());
  const auto& ex = dataset[6];

  SUBCASE("BOS-only prefix behaves like generate") {
    GenerateOptions opts;
    opts.max_len = 20;
    const auto plain = generate(params, ex.source_ids, ex.src_context_mask, opts);
    const std::vector<int> bos = {kBosId};
    const auto forced =
        forced_prefix_generate(params, ex.source_ids, ex.src_context_mask, bos, 20);
    CHECK(plain == forced);
  }

  SUBCASE("suffix excludes the forced tokens") {
    std::vector<int> prefix = {kBosId};
    const auto first = encode("t3 t5", f.vocab, Side::kTarget).ids;
    prefix.insert(prefix.end(), first.begin(), first.end());
    prefix.push_back(kSepId);
    const auto out = forced_prefix_generate(params, ex.source_ids,
                                            ex.src_context_mask, prefix, 24);
    if (!out.empty()) {
      CHECK(out.front() != kBosId);
      CHECK(out.size() <= 24 - prefix.size());
    }
  }

  SUBCASE("overlong prefix is rejected") {
    std::vector<int> prefix(30, kSepId);
    prefix[0] = kBosId;
    CHECK_THROWS_AS(forced_prefix_generate(params, ex.source_ids,
                                           ex.src_context_mask, prefix, 20),
                    ValidationError);
    CHECK_THROWS_AS(forced_prefix_generate(params, ex.source_ids,
                                           ex.src_context_mask,
                                           std::vector<int>{kEosId}, 20),
                    ValidationError);
  }
}

TEST_CASE("model config is validated") {
  ModelConfig mc;
  mc.vocab_size = 50;
  mc.d_model = 30;
  mc.heads = 4;  // not divisible
  CHECK_THROWS_AS(mc.validate(), ValidationError);
  mc.d_model = 32;
  CHECK_NOTHROW(mc.validate());
  mc.vocab_size = 3;  // below the reserved band
  CHECK_THROWS_AS(mc.validate(), ValidationError);
}

TEST_CASE("sequence length beyond max_positions is rejected") {
  Fixture f;
  ModelConfig mc = f.config();
  mc.max_positions = 8;
  auto rng = Rng(3);
  const auto params = Parameters::init(mc, rng);
  std::vector<int> long_input(9, kUnkId);
  CHECK_THROWS_AS(encode_source(params, long_input, {}, Mode::kEval),
                  ValidationError);
}

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctxmt/contextizer.hpp"
#include "ctxmt/rng.hpp"
#include "ctxmt/tensor.hpp"

namespace ctxmt {

enum class Mode { kTrain, kEval };

struct ModelConfig {
  int layers_enc = 2;
  int layers_dec = 2;
  int heads = 4;
  int d_model = 128;
  int d_ff = 256;
  double dropout = 0.1;
  int max_positions = 256;
  int vocab_size = 0;
  // positional encoding: sinusoidal (the only kind)

  int head_dim() const { return d_model / heads; }
  void validate() const;
};

struct LayerNormParams {
  Matrix gain;  // 1 x d
  Matrix bias;  // 1 x d
};

struct AttentionParams {
  Matrix wq, wk, wv, wo;  // d x d
  Matrix bq, bk, bv, bo;  // 1 x d
};

struct FeedForwardParams {
  Matrix w1;  // d x d_ff
  Matrix b1;  // 1 x d_ff
  Matrix w2;  // d_ff x d
  Matrix b2;  // 1 x d
};

struct EncoderLayerParams {
  LayerNormParams ln1;
  AttentionParams attn;
  LayerNormParams ln2;
  FeedForwardParams ffn;
};

struct DecoderLayerParams {
  LayerNormParams ln1;
  AttentionParams self_attn;
  LayerNormParams ln2;
  AttentionParams cross_attn;
  LayerNormParams ln3;
  FeedForwardParams ffn;
};

// All trainable weights. Shared input/output embedding; pre-normalization
// layer order with final encoder/decoder norms.
struct Parameters {
  ModelConfig config;
  Matrix embedding;  // vocab x d
  std::vector<EncoderLayerParams> enc_layers;
  LayerNormParams enc_final;
  std::vector<DecoderLayerParams> dec_layers;
  LayerNormParams dec_final;

  Parameters() = default;
  explicit Parameters(const ModelConfig& cfg);  // zero-filled, shapes set

  // Scaled-uniform init (+-sqrt(6/(fan_in+fan_out))) for weights, zeros for
  // biases, ones for norm gains. Deterministic in the rng stream.
  static Parameters init(const ModelConfig& cfg, Rng& rng);

  Parameters zeros_like() const;

  // Named views over every array, in a fixed canonical order (the checkpoint
  // and optimizer-state order).
  std::vector<std::pair<std::string, Matrix*>> arrays();
  std::vector<std::pair<std::string, const Matrix*>> arrays() const;

  std::size_t coordinate_count() const;
  double& coordinate(std::size_t flat);  // flat index over arrays() order
  bool all_finite() const;
};

// Boolean visibility matrix over (query positions x key positions).
struct AttentionMask {
  int queries = 0;
  int keys = 0;
  std::vector<std::uint8_t> visible;

  bool at(int q, int k) const {
    return visible[static_cast<std::size_t>(q) * keys + k] != 0;
  }
  void set(int q, int k, bool v) {
    visible[static_cast<std::size_t>(q) * keys + k] = v ? 1 : 0;
  }

  static AttentionMask all_visible(int queries, int keys);
  // Every query sees exactly the keys flagged visible.
  static AttentionMask broadcast_keys(int queries,
                                      std::span<const std::uint8_t> key_visible);
  // Lower-triangular; with key_visible given, additionally requires non-PAD.
  static AttentionMask causal(int n,
                              std::span<const std::uint8_t> key_visible = {});

  // Throws if some query row has no visible key.
  void validate_rows() const;
};

// Cross-attention key visibility under CoAttMask: visible <=> non-PAD and not
// a context position. Throws when nothing stays visible.
std::vector<std::uint8_t> coatt_mask(std::span<const std::uint8_t> pad_mask,
                                     std::span<const std::uint8_t> src_context_mask);

// Scaled dot-product attention over already-projected single-head inputs.
// Weights are zero on invisible keys and sum to one over visible keys per
// query; out = weights * values. `weights_out`, when given, receives the
// (queries x keys) weight matrix.
void attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
               const AttentionMask& mask, Matrix& out, Matrix* weights_out = nullptr);

struct LayerNormCache {
  Matrix x_hat;
  std::vector<double> inv_std;
};

struct AttnCache {
  Matrix x_q;                   // sublayer input after norm (query side)
  Matrix q, k, v;               // T x d, heads packed
  std::vector<Matrix> weights;  // one (Tq x Tk) matrix per head
  Matrix concat;                // Tq x d
  Matrix drop_mask;             // empty in eval mode
};

struct FfnCache {
  Matrix x_in;  // sublayer input after norm
  Matrix h_pre;
  Matrix h_act;
  Matrix drop_mask;
};

struct EncLayerCache {
  LayerNormCache ln1;
  AttnCache attn;
  LayerNormCache ln2;
  FfnCache ffn;
};

struct DecLayerCache {
  LayerNormCache ln1;
  AttnCache self_attn;
  LayerNormCache ln2;
  AttnCache cross_attn;
  LayerNormCache ln3;
  FfnCache ffn;
};

struct ForwardCache {
  Matrix enc_embed_drop;
  std::vector<EncLayerCache> enc_layers;
  LayerNormCache enc_final;
  Matrix enc_out;

  Matrix dec_embed_drop;
  std::vector<DecLayerCache> dec_layers;
  LayerNormCache dec_final;
  Matrix dec_out;

  std::vector<std::uint8_t> cross_visible;
  std::vector<int> dec_input_ids;

  // Total cross-attention weight on context keys, accumulated over all
  // decoder layers, heads, and queries. Exactly zero under CoAttMask.
  double cross_context_mass = 0.0;
  // Same, one entry per (decoder layer, head).
  std::vector<double> cross_context_mass_per_head;
};

// Encoder pass: self-attention sees every non-PAD position, context included.
// pad_mask may be empty (no padding); dropout only in train mode.
Matrix encode_source(const Parameters& params, std::span<const int> source_ids,
                     std::span<const std::uint8_t> pad_mask, Mode mode,
                     Rng* dropout_rng = nullptr, ForwardCache* cache = nullptr);

// Decoder pass over a full teacher-forced input prefix. Returns logits, one
// row per decoder input position. `cross_visible` is the CoAttMask key
// visibility over encoder outputs.
Matrix decode_teacher_forced(const Parameters& params, const Matrix& enc_out,
                             std::span<const std::uint8_t> cross_visible,
                             std::span<const int> dec_input_ids,
                             std::span<const std::uint8_t> dec_pad_mask, Mode mode,
                             Rng* dropout_rng = nullptr, ForwardCache* cache = nullptr,
                             std::span<const std::uint8_t> src_context_mask = {});

// Full teacher-forced pass over one example. Decoder input is
// target_ids[0..T-2]; the logits row t predicts target_ids[t+1]. With
// use_coattmask = false the cross-attention sees every non-PAD encoder
// position (plain encoder-decoder baseline sharing the same weights).
Matrix model_forward(const Parameters& params, const EncodedExample& example,
                     Mode mode, Rng* dropout_rng = nullptr,
                     ForwardCache* cache = nullptr, bool use_coattmask = true);

// Reverse-mode pass; accumulates into `grads` (same shapes as params).
void model_backward(const Parameters& params, const EncodedExample& example,
                    const ForwardCache& cache, const Matrix& dlogits,
                    Parameters& grads);

struct GenerateOptions {
  int max_len = 128;   // total target length budget, BOS included
  int beam_width = 1;  // 1 = greedy
};

// Decodes from BOS until EOS or max_len. Greedy is argmax with index-order
// tie-break; beam keeps the top-width extensions by summed token
// log-probability and length-normalizes (divide by token count) at
// finalization. Returns generated ids without BOS, including EOS when
// produced.
std::vector<int> generate(const Parameters& params, std::span<const int> source_ids,
                          std::span<const std::uint8_t> src_context_mask,
                          const GenerateOptions& opts);

// Force-feeds the gold target-context prefix (BOS + context + separators),
// then generates the current sentence. Only the generated suffix is returned.
std::vector<int> forced_prefix_generate(const Parameters& params,
                                        std::span<const int> source_ids,
                                        std::span<const std::uint8_t> src_context_mask,
                                        std::span<const int> gold_prefix_ids,
                                        int max_len);

}  // namespace ctxmt

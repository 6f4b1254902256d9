#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxmt/corpus.hpp"
#include "ctxmt/rng.hpp"
#include "ctxmt/tokenizer.hpp"

namespace ctxmt {

// Context-extension settings, the spec of one model family. The paper's
// naming convention maps "k-1" to k_src = k-1 and "1-k" to k_tgt = k-1;
// source and target context are evaluated separately, never combined.
struct ContextConfig {
  int k_src = 0;  // preceding source sentences, 0..4
  int k_tgt = 0;  // preceding target sentences, 0..4
  bool speaker_tags = false;
  bool scene_tag = false;
  bool dynamic = false;  // resample context size per example each epoch
  int max_src_len = 0;   // 0 = default: 256 with context, 128 without
  int max_tgt_len = 0;

  int effective_max_src_len() const { return max_src_len > 0 ? max_src_len : (k_src > 0 ? 256 : 128); }
  int effective_max_tgt_len() const { return max_tgt_len > 0 ? max_tgt_len : (k_tgt > 0 ? 256 : 128); }
  int k_max() const { return k_src > 0 ? k_src : k_tgt; }

  void validate() const;

  // Parses the paper-style family name: "1-1", "2-1", ..., "1-5".
  static ContextConfig from_family(const std::string& family);
  std::string family() const;
};

struct UsedContext {
  int source = 0;  // context sentences actually encoded on the source side
  int target = 0;
  bool dropped_context = false;   // context sentences dropped to fit max len
  bool truncated_current = false; // current sentence itself truncated
};

// One training/eval unit: context-extended token ids plus the CoAttMask
// source-context mask and the target loss mask.
struct EncodedExample {
  std::string doc_id;
  int index = 0;
  std::vector<int> source_ids;
  std::vector<int> target_ids;
  // true = context position (scene token, speaker tags, context sentences,
  // separators): masked out of decoder cross-attention.
  std::vector<std::uint8_t> src_context_mask;
  // true = position contributes to the loss (current sentence tokens + EOS).
  std::vector<std::uint8_t> tgt_loss_mask;
  UsedContext used_ctx;
};

struct SourceInput {
  std::vector<int> ids;
  std::vector<std::uint8_t> context_mask;
  UsedContext used;
};

struct TargetOutput {
  std::vector<int> ids;
  std::vector<std::uint8_t> loss_mask;
  UsedContext used;
};

// Layout: [scene] ([speaker tag] context sentence </t>)* current EOS.
// Speaker tag per context sentence: <SameSpeak> when that sentence's speaker
// equals the current sentence's, else <DiffSpeak>. Oldest context first.
// Over-length inputs drop whole context sentences oldest-first; a current
// sentence that alone exceeds the limit is tail-truncated.
SourceInput build_source_input(const DialogueDocument& doc, int i,
                               const ContextConfig& cfg, const Vocabulary& vocab,
                               std::optional<int> ctx_override = std::nullopt);

// Layout: BOS (context sentence </t>)* current EOS.
TargetOutput build_target_output(const DialogueDocument& doc, int i,
                                 const ContextConfig& cfg, const Vocabulary& vocab,
                                 std::optional<int> ctx_override = std::nullopt);

// Uniform integer in [0, k_max]; deterministic under a fixed rng stream.
int sample_context_size(Rng& rng, int k_max);

// One EncodedExample per utterance, in split order. With cfg.dynamic, each
// example's context size is drawn from a stream derived from
// (seed, doc_id, i) so datasets are reproducible and order-independent.
std::vector<EncodedExample> make_dataset(std::span<const DialogueDocument> docs,
                                         const ContextConfig& cfg,
                                         const Vocabulary& vocab,
                                         std::uint64_t seed = 0);

// Line-delimited JSON inspection dump, one record per example.
std::string dump_dataset(std::span<const EncodedExample> dataset);

}  // namespace ctxmt

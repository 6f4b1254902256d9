#include "ctxmt/contextizer.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctxmt/error.hpp"

namespace ctxmt {

void ContextConfig::validate() const {
  if (k_src < 0 || k_src > 4 || k_tgt < 0 || k_tgt > 4)
    throw ValidationError("context size must be in 0..4");
  if (k_src > 0 && k_tgt > 0)
    throw ValidationError(
        "source and target context are separate model families; "
        "k_src and k_tgt cannot both be positive");
  if (speaker_tags && k_src < 1)
    throw ValidationError("speaker tags require source context (k_src >= 1)");
  if (max_src_len < 0 || max_tgt_len < 0)
    throw ValidationError("negative max length");
}

ContextConfig ContextConfig::from_family(const std::string& family) {
  const auto dash = family.find('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 >= family.size())
    throw ValidationError("bad family name (expected like \"2-1\"): " + family);
  int src_n = 0, tgt_n = 0;
  try {
    src_n = std::stoi(family.substr(0, dash));
    tgt_n = std::stoi(family.substr(dash + 1));
  } catch (const std::exception&) {
    throw ValidationError("bad family name (expected like \"2-1\"): " + family);
  }
  if (src_n < 1 || tgt_n < 1)
    throw ValidationError("family sides must be >= 1: " + family);
  ContextConfig cfg;
  cfg.k_src = src_n - 1;
  cfg.k_tgt = tgt_n - 1;
  cfg.validate();
  return cfg;
}

std::string ContextConfig::family() const {
  return std::to_string(k_src + 1) + "-" + std::to_string(k_tgt + 1);
}

namespace {

std::vector<int> encode_side(const std::string& text, const Vocabulary& vocab,
                             Side side) {
  return encode(text, vocab, side).ids;
}

}  // namespace

SourceInput build_source_input(const DialogueDocument& doc, int i,
                               const ContextConfig& cfg, const Vocabulary& vocab,
                               std::optional<int> ctx_override) {
  if (i < 0 || i >= static_cast<int>(doc.utterances.size()))
    throw ValidationError("utterance index out of range: " + std::to_string(i) +
                          " in doc " + doc.doc_id);
  const int k = ctx_override.value_or(cfg.k_src);
  if (ctx_override && (*ctx_override < 0 || *ctx_override > cfg.k_src))
    throw ValidationError("ctx_override outside [0, k_src]");
  const int max_len = cfg.effective_max_src_len();

  const auto& current = doc.utterances[static_cast<std::size_t>(i)];
  std::vector<int> current_ids = encode_side(current.source_text, vocab, Side::kSource);

  // Context sentences, oldest first, each with optional speaker tag and SEP.
  struct CtxSentence {
    std::vector<int> ids;  // [tag] tokens SEP
  };
  std::vector<CtxSentence> context;
  const int avail = std::min(k, i);
  for (int j = i - avail; j < i; ++j) {
    const auto& u = doc.utterances[static_cast<std::size_t>(j)];
    CtxSentence cs;
    if (cfg.speaker_tags) {
      cs.ids.push_back(u.speaker_id == current.speaker_id ? kSameSpeakId
                                                          : kDiffSpeakId);
    }
    auto toks = encode_side(u.source_text, vocab, Side::kSource);
    cs.ids.insert(cs.ids.end(), toks.begin(), toks.end());
    cs.ids.push_back(kSepId);
    context.push_back(std::move(cs));
  }

  SourceInput out;
  out.used.source = static_cast<int>(context.size());

  const int fixed = (cfg.scene_tag ? 1 : 0) + static_cast<int>(current_ids.size()) + 1;
  // Drop oldest context sentences until the input fits.
  std::size_t first_ctx = 0;
  int total = fixed;
  for (const auto& cs : context) total += static_cast<int>(cs.ids.size());
  while (total > max_len && first_ctx < context.size()) {
    total -= static_cast<int>(context[first_ctx].ids.size());
    ++first_ctx;
    out.used.dropped_context = true;
    out.used.source -= 1;
  }
  if (total > max_len) {
    // Current sentence alone exceeds the budget: truncate its tail.
    const int keep = max_len - (cfg.scene_tag ? 1 : 0) - 1;
    current_ids.resize(static_cast<std::size_t>(std::max(keep, 1)));
    out.used.truncated_current = true;
  }

  if (cfg.scene_tag) {
    out.ids.push_back(scene_token_id(doc.scene));
    out.context_mask.push_back(1);
  }
  for (std::size_t c = first_ctx; c < context.size(); ++c) {
    for (int id : context[c].ids) {
      out.ids.push_back(id);
      out.context_mask.push_back(1);
    }
  }
  for (int id : current_ids) {
    out.ids.push_back(id);
    out.context_mask.push_back(0);
  }
  out.ids.push_back(kEosId);
  out.context_mask.push_back(0);
  return out;
}

TargetOutput build_target_output(const DialogueDocument& doc, int i,
                                 const ContextConfig& cfg, const Vocabulary& vocab,
                                 std::optional<int> ctx_override) {
  if (i < 0 || i >= static_cast<int>(doc.utterances.size()))
    throw ValidationError("utterance index out of range: " + std::to_string(i) +
                          " in doc " + doc.doc_id);
  const int k = ctx_override.value_or(cfg.k_tgt);
  if (ctx_override && (*ctx_override < 0 || *ctx_override > cfg.k_tgt))
    throw ValidationError("ctx_override outside [0, k_tgt]");
  const int max_len = cfg.effective_max_tgt_len();

  const auto& current = doc.utterances[static_cast<std::size_t>(i)];
  std::vector<int> current_ids = encode_side(current.target_text, vocab, Side::kTarget);

  std::vector<std::vector<int>> context;
  const int avail = std::min(k, i);
  for (int j = i - avail; j < i; ++j) {
    auto ids = encode_side(doc.utterances[static_cast<std::size_t>(j)].target_text,
                           vocab, Side::kTarget);
    ids.push_back(kSepId);
    context.push_back(std::move(ids));
  }

  TargetOutput out;
  out.used.target = static_cast<int>(context.size());

  const int fixed = 1 + static_cast<int>(current_ids.size()) + 1;  // BOS ... EOS
  std::size_t first_ctx = 0;
  int total = fixed;
  for (const auto& cs : context) total += static_cast<int>(cs.size());
  while (total > max_len && first_ctx < context.size()) {
    total -= static_cast<int>(context[first_ctx].size());
    ++first_ctx;
    out.used.dropped_context = true;
    out.used.target -= 1;
  }
  if (total > max_len) {
    const int keep = max_len - 2;
    current_ids.resize(static_cast<std::size_t>(std::max(keep, 1)));
    out.used.truncated_current = true;
  }

  out.ids.push_back(kBosId);
  out.loss_mask.push_back(0);
  for (std::size_t c = first_ctx; c < context.size(); ++c) {
    for (int id : context[c]) {
      out.ids.push_back(id);
      out.loss_mask.push_back(0);
    }
  }
  for (int id : current_ids) {
    out.ids.push_back(id);
    out.loss_mask.push_back(1);
  }
  out.ids.push_back(kEosId);
  out.loss_mask.push_back(1);
  return out;
}

int sample_context_size(Rng& rng, int k_max) {
  if (k_max < 0) throw ValidationError("k_max must be >= 0");
  return rng.uniform_int(0, k_max);
}

std::vector<EncodedExample> make_dataset(std::span<const DialogueDocument> docs,
                                         const ContextConfig& cfg,
                                         const Vocabulary& vocab,
                                         std::uint64_t seed) {
  cfg.validate();
  std::vector<EncodedExample> dataset;
  for (const auto& doc : docs) {
    for (int i = 0; i < static_cast<int>(doc.utterances.size()); ++i) {
      std::optional<int> ctx;
      if (cfg.dynamic) {
        auto rng = Rng::derive(seed, {fnv1a64(doc.doc_id),
                                      static_cast<std::uint64_t>(i)});
        ctx = sample_context_size(rng, cfg.k_max());
      }
      EncodedExample ex;
      ex.doc_id = doc.doc_id;
      ex.index = i;
      auto src = build_source_input(doc, i, cfg, vocab, cfg.k_src > 0 ? ctx : std::nullopt);
      auto tgt = build_target_output(doc, i, cfg, vocab, cfg.k_tgt > 0 ? ctx : std::nullopt);
      ex.source_ids = std::move(src.ids);
      ex.src_context_mask = std::move(src.context_mask);
      ex.target_ids = std::move(tgt.ids);
      ex.tgt_loss_mask = std::move(tgt.loss_mask);
      ex.used_ctx.source = src.used.source;
      ex.used_ctx.target = tgt.used.target;
      ex.used_ctx.dropped_context = src.used.dropped_context || tgt.used.dropped_context;
      ex.used_ctx.truncated_current = src.used.truncated_current || tgt.used.truncated_current;
      dataset.push_back(std::move(ex));
    }
  }
  return dataset;
}

std::string dump_dataset(std::span<const EncodedExample> dataset) {
  std::ostringstream out;
  for (const auto& ex : dataset) {
    nlohmann::ordered_json rec;
    rec["doc_id"] = ex.doc_id;
    rec["i"] = ex.index;
    rec["source_ids"] = ex.source_ids;
    rec["src_context_mask"] = ex.src_context_mask;
    rec["target_ids"] = ex.target_ids;
    rec["tgt_loss_mask"] = ex.tgt_loss_mask;
    rec["used_ctx"] = {{"source", ex.used_ctx.source},
                       {"target", ex.used_ctx.target},
                       {"dropped_context", ex.used_ctx.dropped_context},
                       {"truncated_current", ex.used_ctx.truncated_current}};
    out << rec.dump() << "\n";
  }
  return out.str();
}

}  // namespace ctxmt

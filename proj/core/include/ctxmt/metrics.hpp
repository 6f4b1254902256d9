#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxmt/contextizer.hpp"
#include "ctxmt/corpus.hpp"
#include "ctxmt/model.hpp"
#include "ctxmt/tokenizer.hpp"

namespace ctxmt {

// Teacher-forced log-probabilities of the gold target tokens at supervised
// positions (current sentence + EOS), one record per sentence.
struct SentenceLogProbs {
  std::string doc_id;
  int index = 0;
  int context_used = 0;
  std::vector<int> gold_ids;     // aligned with log_probs
  std::vector<double> log_probs; // natural log, <= 0

  double sum() const;
};

struct RunLogProbs {
  int context_size = 0;
  std::vector<SentenceLogProbs> sentences;
};

// Scores one split with an explicit context size c. The same checkpoint
// serves both runs of Eq. (2): c = 0 is the context-agnostic run, c > 0 the
// context-aware run. When c exceeds the trained context size a warning line
// is emitted to stderr (not fatal).
RunLogProbs score_logprobs(const Parameters& params,
                           std::span<const DialogueDocument> docs,
                           const ContextConfig& trained_cfg, int context_size,
                           const Vocabulary& vocab);

struct CxmiResult {
  double nats = 0.0;
  double bits = 0.0;
  std::int64_t sentences = 0;
  std::vector<double> per_sentence_delta;  // aware sum - agnostic sum, nats
};

// CXMI estimate of Eq. (2): mean over sentences of
// (sum of aware token log-probs) - (sum of agnostic token log-probs).
// Throws on misaligned runs.
CxmiResult cxmi(const RunLogProbs& agnostic, const RunLogProbs& aware);

struct HonorificTokenStats {
  int token_id = 0;
  std::string surface;
  double mean_delta = 0.0;  // nats
  std::int64_t count = 0;
};

struct HonorificsResult {
  double pcxmi = 0.0;  // mean per-token delta over honorific gold positions
  std::int64_t token_count = 0;
  std::vector<HonorificTokenStats> breakdown;  // by token, descending mean delta
};

// P-CXMI restricted to positions whose gold token is an honorific expression,
// averaged over those tokens. Returns nullopt when the split holds none
// (reported as absent, not zero).
std::optional<HonorificsResult> honorifics_pcxmi(const RunLogProbs& agnostic,
                                                 const RunLogProbs& aware,
                                                 std::span<const int> honorific_ids,
                                                 const Vocabulary& vocab);

enum class BleuMode { kCharacter, kWhitespace };

struct BleuOptions {
  int max_n = 4;
  BleuMode mode = BleuMode::kCharacter;
  bool add_one_smoothing = false;  // tiny-test aid; reference scores use none
};

struct BleuScore {
  double score = 0.0;  // 0..100
  std::vector<double> precisions;
  double brevity_penalty = 1.0;
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;
};

// Corpus BLEU: clipped n-gram precisions, geometric mean, brevity penalty
// exp(1 - r/h) when h < r. Unsmoothed: any zero precision gives score 0.
BleuScore bleu(std::span<const std::string> hypotheses,
               std::span<const std::string> references,
               const BleuOptions& opts = {});

// One report row per context size plus an honorifics section.
struct CxmiReport {
  int context_size = 0;
  CxmiResult corpus;
  std::optional<HonorificsResult> honorifics;
};

// Tab-separated report: (context_size, CXMI_nats, CXMI_bits, N) rows in
// ascending context order, then per-context honorifics sections
// (token, mean_delta, count), "absent" when a split has no honorific tokens.
// CXMI numbers carry 4 decimals.
std::string format_cxmi_report(std::span<const CxmiReport> reports);
void emit_cxmi_report(std::span<const CxmiReport> reports,
                      const std::filesystem::path& file);
std::vector<CxmiReport> parse_cxmi_report(const std::string& text);

// Single-line record: score, p1..p4, BP, hyp_len, ref_len. BLEU carries 2
// decimals.
std::string format_bleu_summary(const BleuScore& score);
void emit_bleu_summary(const BleuScore& score, const std::filesystem::path& file);

}  // namespace ctxmt

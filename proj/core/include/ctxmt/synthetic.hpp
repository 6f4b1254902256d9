#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "ctxmt/corpus.hpp"

namespace ctxmt {

inline constexpr const char* kMasuMarker = "+masu";
inline constexpr const char* kDaMarker = "+da";

// Synthetic dialogue language. Source sentences are random words w1..wV;
// target sentences mirror them token-wise through the bijection wi -> ti and
// append one politeness marker. The marker is "+masu" when the document scene
// is meeting or presentation, or when the speaker changed relative to the
// previous utterance; otherwise "+da". The first utterance of a non-forcing
// document takes "+da". The marker is a pure function of (scene, speaker
// turn), so the current source sentence alone carries no information about it.
struct SynthSpec {
  int train_docs = 200;
  int dev_docs = 20;
  int test_docs = 20;
  int utterances_per_doc = 10;
  int source_vocab = 20;  // V_s >= 8
  int min_sentence_len = 3;
  int max_sentence_len = 7;
  // Scene draw weights indexed by SceneTag. The default mix holds only
  // non-forcing scenes; together with speaker_change_prob = 5/9 and 10
  // utterances per document it puts the "+masu" share at 50%, one bit of
  // marker uncertainty for a context-agnostic model.
  std::array<double, kSceneCount> scene_weights = {0.25, 0.25, 0.25,
                                                   0.0,  0.25, 0.0};
  double speaker_change_prob = 5.0 / 9.0;

  void validate() const;

  // Named presets: "default" (above) and "marker-skew" (half meeting docs,
  // rare speaker changes; previous-marker context becomes informative).
  static SynthSpec preset(const std::string& name);
};

bool scene_forces_masu(SceneTag scene);

// The marker the generation rule assigns at utterance i of doc. Used both by
// the generator and as the exhaustive-scan oracle in tests.
std::string expected_marker(const DialogueDocument& doc, int i);

// Deterministic function of (spec, seed).
CorpusSet generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed);

}  // namespace ctxmt

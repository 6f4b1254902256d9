#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxmt/corpus.hpp"

namespace ctxmt {

enum class Side { kSource, kTarget };
enum class TargetMode { kWord, kCharacter };

// Reserved token ids. Fixed layout: 0..12.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kSepId = 4;       // "</t>"
inline constexpr int kSameSpeakId = 5; // "<SameSpeak>"
inline constexpr int kDiffSpeakId = 6; // "<DiffSpeak>"
inline constexpr int kFirstSceneId = 7;
inline constexpr int kReservedCount = 13;

inline int scene_token_id(SceneTag tag) {
  return kFirstSceneId + static_cast<int>(tag);
}

struct TokenSequence {
  std::vector<int> ids;
  Side side = Side::kSource;
};

// Token inventory with reserved ids, atomic multi-character entries for the
// honorific expressions and the synthetic markers, and deterministic id
// assignment: reserved ids, then atomic entries in canonical order, then the
// rest by descending frequency (lexicographic tie-break).
class Vocabulary {
 public:
  Vocabulary() = default;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  TargetMode target_mode() const { return target_mode_; }
  int min_freq() const { return min_freq_; }

  // Returns kUnkId for unknown tokens.
  int token_id(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;  // throws on out-of-range id

  // Ids of the Japanese honorific expressions present in this vocabulary.
  // With include_synthetic_marker, the "+masu" marker id (if present) is
  // added; it is tracked separately from the Japanese list.
  std::vector<int> honorific_ids(bool include_synthetic_marker = false) const;

  // One token per line, line number = id; leading '#' comment records the
  // build parameters.
  void save(const std::filesystem::path& file) const;
  static Vocabulary load(const std::filesystem::path& file);
  std::string serialize() const;
  static Vocabulary deserialize(const std::string& text);

  // FNV-1a64 of the serialized form; stored in checkpoints.
  std::uint64_t hash() const;

  // The canonical atomic-entry list (19 honorific expressions, then the two
  // synthetic markers).
  static const std::vector<std::string>& atomic_entries();
  static const std::vector<std::string>& honorific_surface_forms();

  friend Vocabulary build_vocab(const CorpusSet&, int, TargetMode);

 private:
  void install_token(const std::string& token);
  void rebuild_special_sets();

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<int> honorific_ids_;  // Japanese expressions present
  int masu_id_ = -1;                // synthetic marker, -1 when absent
  TargetMode target_mode_ = TargetMode::kCharacter;
  int min_freq_ = 1;
};

// Counts tokens over both sides of all splits and assembles the vocabulary.
// Source text is split on whitespace; target text follows target_mode.
// Atomic entries found in the corpus are kept regardless of min_freq.
Vocabulary build_vocab(const CorpusSet& corpus, int min_freq = 1,
                       TargetMode target_mode = TargetMode::kCharacter);

// Tokenizes to surface strings (no id lookup). Target character mode applies
// repeated longest-match over atomic entries, falling back to one code point.
std::vector<std::string> tokenize(const std::string& text, Side side,
                                  TargetMode target_mode);

// OOV maps to UNK. No BOS/EOS added here.
TokenSequence encode(const std::string& text, const Vocabulary& vocab, Side side);

// Source side joins with single spaces; character-mode target concatenates.
// Special tokens render as their literal surfaces; PAD is dropped.
std::string decode(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace ctxmt

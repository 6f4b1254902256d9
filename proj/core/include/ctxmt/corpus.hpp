#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ctxmt {

// The six dialogue-situation tags. Each maps 1:1 to a scene special token.
enum class SceneTag : int {
  kFaceToFaceConversation = 0,
  kPhoneCall = 1,
  kGeneralChatting = 2,
  kMeeting = 3,
  kTraining = 4,
  kPresentation = 5,
};

inline constexpr int kSceneCount = 6;

// Scene name as it appears in corpus files ("face-to-face conversation", ...).
const std::string& scene_name(SceneTag tag);
// Scene special-token surface ("<face-to-face conversation>", ...).
const std::string& scene_token(SceneTag tag);
std::optional<SceneTag> parse_scene(const std::string& name);

struct Utterance {
  int index = 0;  // 0-based position within the document
  std::string speaker_id;
  std::string source_text;
  std::string target_text;
};

struct DialogueDocument {
  std::string doc_id;
  SceneTag scene = SceneTag::kGeneralChatting;
  std::vector<Utterance> utterances;
};

struct CorpusSet {
  std::vector<DialogueDocument> train;
  std::vector<DialogueDocument> dev;
  std::vector<DialogueDocument> test;
  std::string provenance;  // source paths or synthesis spec + seed

  const std::vector<DialogueDocument>& split(const std::string& name) const;
};

struct SplitStats {
  std::int64_t sentences = 0;
  std::int64_t scenarios = 0;
  std::int64_t speakers = 0;  // distinct speaker ids
  std::map<SceneTag, std::int64_t> scene_histogram;
};

struct CorpusStats {
  SplitStats train;
  SplitStats dev;
  SplitStats test;
};

struct LoadOptions {
  // Documents with a missing or unknown scene string map to this scene.
  // AMI-style files carry no scenes; the default default is "meeting".
  // nullopt makes unknown scenes a hard error.
  std::optional<SceneTag> default_scene = SceneTag::kMeeting;
};

inline constexpr const char* kCorpusSchemaBsdJsonV1 = "bsd-json-v1";

// Loads one bsd-json-v1 split file into a validated document list.
std::vector<DialogueDocument> load_split(const std::filesystem::path& file,
                                         const LoadOptions& opts = {});

// Loads a corpus. `path` is either a directory holding train.json / dev.json
// / test.json (any subset, train required) or a single split file, which is
// loaded as the train split. `schema` must be "bsd-json-v1".
CorpusSet load_corpus(const std::filesystem::path& path,
                      const std::string& schema = kCorpusSchemaBsdJsonV1,
                      const LoadOptions& opts = {});

// Writes a document list in bsd-json-v1 form. Deterministic serialization.
void save_split(const std::vector<DialogueDocument>& docs,
                const std::filesystem::path& file);

// Writes train.json/dev.json/test.json under `dir` (created if missing).
void save_corpus(const CorpusSet& corpus, const std::filesystem::path& dir);

SplitStats split_stats(const std::vector<DialogueDocument>& docs);
CorpusStats corpus_stats(const CorpusSet& corpus);

// Throws ValidationError (with doc_id context) on any invariant violation.
void validate_document(const DialogueDocument& doc);
void validate_corpus(const CorpusSet& corpus);

}  // namespace ctxmt

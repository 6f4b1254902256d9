#include "ctxmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctxmt/error.hpp"
#include "ctxmt/utf8.hpp"

namespace ctxmt {

namespace {

using ordered_json = nlohmann::ordered_json;

const std::array<std::string, kSceneCount> kSceneNames = {
    "face-to-face conversation", "phone call", "general chatting",
    "meeting",                   "training",   "presentation"};

std::string trimmed(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::string& scene_name(SceneTag tag) {
  return kSceneNames.at(static_cast<std::size_t>(tag));
}

const std::string& scene_token(SceneTag tag) {
  static const std::array<std::string, kSceneCount> tokens = [] {
    std::array<std::string, kSceneCount> t;
    for (int i = 0; i < kSceneCount; ++i) t[i] = "<" + kSceneNames[i] + ">";
    return t;
  }();
  return tokens.at(static_cast<std::size_t>(tag));
}

std::optional<SceneTag> parse_scene(const std::string& name) {
  for (int i = 0; i < kSceneCount; ++i) {
    if (kSceneNames[i] == name) return static_cast<SceneTag>(i);
  }
  return std::nullopt;
}

const std::vector<DialogueDocument>& CorpusSet::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw ValidationError("unknown split: " + name);
}

void validate_document(const DialogueDocument& doc) {
  if (doc.doc_id.empty()) throw ValidationError("document with empty doc_id");
  if (doc.utterances.empty())
    throw ValidationError("document " + doc.doc_id + ": no utterances");
  for (std::size_t i = 0; i < doc.utterances.size(); ++i) {
    const auto& u = doc.utterances[i];
    if (u.index != static_cast<int>(i)) {
      throw ValidationError("document " + doc.doc_id +
                            ": non-contiguous indices (expected " +
                            std::to_string(i) + ", got " +
                            std::to_string(u.index) + ")");
    }
    if (trimmed(u.source_text).empty())
      throw ValidationError("document " + doc.doc_id + ", utterance " +
                            std::to_string(i) + ": empty source text");
    if (trimmed(u.target_text).empty())
      throw ValidationError("document " + doc.doc_id + ", utterance " +
                            std::to_string(i) + ": empty target text");
  }
}

void validate_corpus(const CorpusSet& corpus) {
  std::set<std::string> seen;
  for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test}) {
    std::set<std::string> in_split;
    for (const auto& doc : *split) {
      validate_document(doc);
      if (!in_split.insert(doc.doc_id).second)
        throw ValidationError("duplicate doc_id within split: " + doc.doc_id);
      if (!seen.insert(doc.doc_id).second)
        throw ValidationError("doc_id collision across splits: " + doc.doc_id);
    }
  }
}

std::vector<DialogueDocument> load_split(const std::filesystem::path& file,
                                         const LoadOptions& opts) {
  if (!std::filesystem::exists(file))
    throw IoError("no such file: " + file.string());
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open: " + file.string());

  ordered_json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(file.string() + ": malformed JSON: " + e.what());
  }
  if (!root.is_array())
    throw ValidationError(file.string() + ": top level must be an array of documents");

  std::vector<DialogueDocument> docs;
  docs.reserve(root.size());
  for (const auto& jdoc : root) {
    DialogueDocument doc;
    if (!jdoc.is_object() || !jdoc.contains("id") || !jdoc["id"].is_string())
      throw ValidationError(file.string() + ": document missing string field 'id'");
    doc.doc_id = jdoc["id"].get<std::string>();

    if (jdoc.contains("tag") && jdoc["tag"].is_string()) {
      const auto tag_str = normalize_nfc(jdoc["tag"].get<std::string>());
      if (auto tag = parse_scene(tag_str)) {
        doc.scene = *tag;
      } else if (opts.default_scene) {
        doc.scene = *opts.default_scene;
      } else {
        throw ValidationError("document " + doc.doc_id + ": unknown scene tag '" +
                              tag_str + "' and no default scene configured");
      }
    } else if (opts.default_scene) {
      doc.scene = *opts.default_scene;
    } else {
      throw ValidationError("document " + doc.doc_id +
                            ": missing scene tag and no default scene configured");
    }

    if (!jdoc.contains("conversation") || !jdoc["conversation"].is_array())
      throw ValidationError("document " + doc.doc_id +
                            ": missing array field 'conversation'");
    for (const auto& ju : jdoc["conversation"]) {
      Utterance u;
      if (!ju.is_object() || !ju.contains("no") || !ju["no"].is_number_integer())
        throw ValidationError("document " + doc.doc_id +
                              ": utterance missing integer field 'no'");
      u.index = ju["no"].get<int>();
      for (const char* field : {"speaker", "source", "target"}) {
        if (!ju.contains(field) || !ju[field].is_string())
          throw ValidationError("document " + doc.doc_id +
                                ": utterance missing string field '" +
                                std::string(field) + "'");
      }
      u.speaker_id = normalize_nfc(ju["speaker"].get<std::string>());
      u.source_text = normalize_nfc(trimmed(ju["source"].get<std::string>()));
      u.target_text = normalize_nfc(trimmed(ju["target"].get<std::string>()));
      doc.utterances.push_back(std::move(u));
    }
    validate_document(doc);
    docs.push_back(std::move(doc));
  }
  return docs;
}

CorpusSet load_corpus(const std::filesystem::path& path, const std::string& schema,
                      const LoadOptions& opts) {
  if (schema != kCorpusSchemaBsdJsonV1)
    throw ValidationError("unknown corpus schema: " + schema);
  if (!std::filesystem::exists(path))
    throw IoError("no such path: " + path.string());

  CorpusSet corpus;
  if (std::filesystem::is_directory(path)) {
    const auto train_file = path / "train.json";
    if (!std::filesystem::exists(train_file))
      throw IoError("corpus directory missing train.json: " + path.string());
    corpus.train = load_split(train_file, opts);
    if (std::filesystem::exists(path / "dev.json"))
      corpus.dev = load_split(path / "dev.json", opts);
    if (std::filesystem::exists(path / "test.json"))
      corpus.test = load_split(path / "test.json", opts);
  } else {
    corpus.train = load_split(path, opts);
  }
  corpus.provenance = "loaded:" + path.string();
  validate_corpus(corpus);
  return corpus;
}

void save_split(const std::vector<DialogueDocument>& docs,
                const std::filesystem::path& file) {
  ordered_json root = ordered_json::array();
  for (const auto& doc : docs) {
    ordered_json jdoc;
    jdoc["id"] = doc.doc_id;
    jdoc["tag"] = scene_name(doc.scene);
    ordered_json conv = ordered_json::array();
    for (const auto& u : doc.utterances) {
      ordered_json ju;
      ju["no"] = u.index;
      ju["speaker"] = u.speaker_id;
      ju["source"] = u.source_text;
      ju["target"] = u.target_text;
      conv.push_back(std::move(ju));
    }
    jdoc["conversation"] = std::move(conv);
    root.push_back(std::move(jdoc));
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write: " + file.string());
  out << root.dump(2) << "\n";
}

void save_corpus(const CorpusSet& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_split(corpus.train, dir / "train.json");
  save_split(corpus.dev, dir / "dev.json");
  save_split(corpus.test, dir / "test.json");
}

SplitStats split_stats(const std::vector<DialogueDocument>& docs) {
  SplitStats stats;
  std::set<std::string> speakers;
  for (const auto& doc : docs) {
    stats.scenarios += 1;
    stats.sentences += static_cast<std::int64_t>(doc.utterances.size());
    stats.scene_histogram[doc.scene] += 1;
    for (const auto& u : doc.utterances) speakers.insert(u.speaker_id);
  }
  stats.speakers = static_cast<std::int64_t>(speakers.size());
  return stats;
}

CorpusStats corpus_stats(const CorpusSet& corpus) {
  return CorpusStats{split_stats(corpus.train), split_stats(corpus.dev),
                     split_stats(corpus.test)};
}

}  // namespace ctxmt

#include "ctxmt/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "ctxmt/error.hpp"
#include "ctxmt/rng.hpp"
#include "ctxmt/synthetic.hpp"
#include "ctxmt/utf8.hpp"

namespace ctxmt {

namespace {

// §5.3 honorific expressions, in the published order.
const std::vector<std::string> kHonorifics = {
    "です",     "でした",   "ます",       "ました",   "ません",
    "ましょう", "でしょう", "ください",   "ございます", "おります",
    "致します", "ご覧",     "なります",   "伺",       "頂く",
    "頂き",     "頂いて",   "下さい",     "申し上げます"};

std::vector<std::string> make_atomic_entries() {
  std::vector<std::string> entries = kHonorifics;
  entries.push_back(kMasuMarker);
  entries.push_back(kDaMarker);
  return entries;
}

std::vector<std::string> reserved_tokens() {
  std::vector<std::string> tokens = {"<pad>",       "<bos>", "<eos>",
                                     "<unk>",       "</t>",  "<SameSpeak>",
                                     "<DiffSpeak>"};
  for (int i = 0; i < kSceneCount; ++i)
    tokens.push_back(scene_token(static_cast<SceneTag>(i)));
  return tokens;
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// Atomic entries decoded to code points, checked by descending length so the
// longest full match wins.
struct AtomicMatcher {
  std::vector<std::pair<std::vector<char32_t>, std::string>> entries;

  AtomicMatcher() {
    for (const auto& e : Vocabulary::atomic_entries())
      entries.emplace_back(utf8_decode(e), e);
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      if (a.first.size() != b.first.size()) return a.first.size() > b.first.size();
      return a.first < b.first;
    });
  }

  // Length (in code points) of the longest atomic entry matching at cps[pos],
  // or 0. *surface receives its UTF-8 form.
  std::size_t match(const std::vector<char32_t>& cps, std::size_t pos,
                    std::string* surface) const {
    for (const auto& [entry, utf8] : entries) {
      if (entry.size() > cps.size() - pos) continue;
      if (std::equal(entry.begin(), entry.end(), cps.begin() + static_cast<long>(pos))) {
        *surface = utf8;
        return entry.size();
      }
    }
    return 0;
  }
};

const AtomicMatcher& atomic_matcher() {
  static const AtomicMatcher matcher;
  return matcher;
}

std::vector<std::string> tokenize_target_characters(const std::string& text) {
  const auto cps = utf8_decode(text);
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < cps.size()) {
    std::string surface;
    const std::size_t matched = atomic_matcher().match(cps, pos, &surface);
    if (matched > 0) {
      out.push_back(std::move(surface));
      pos += matched;
    } else {
      out.push_back(utf8_encode(cps[pos]));
      pos += 1;
    }
  }
  return out;
}

}  // namespace

const std::vector<std::string>& Vocabulary::atomic_entries() {
  static const std::vector<std::string> entries = make_atomic_entries();
  return entries;
}

const std::vector<std::string>& Vocabulary::honorific_surface_forms() {
  return kHonorifics;
}

std::vector<std::string> tokenize(const std::string& text, Side side,
                                  TargetMode target_mode) {
  if (side == Side::kSource || target_mode == TargetMode::kWord)
    return split_whitespace(text);
  return tokenize_target_characters(text);
}

int Vocabulary::token_id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw ValidationError("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::honorific_ids(bool include_synthetic_marker) const {
  std::vector<int> ids = honorific_ids_;
  if (include_synthetic_marker && masu_id_ >= 0) ids.push_back(masu_id_);
  return ids;
}

void Vocabulary::install_token(const std::string& token) {
  if (token_to_id_.count(token))
    throw ValidationError("duplicate vocabulary token: " + token);
  token_to_id_.emplace(token, size());
  id_to_token_.push_back(token);
}

void Vocabulary::rebuild_special_sets() {
  honorific_ids_.clear();
  for (const auto& h : kHonorifics) {
    auto it = token_to_id_.find(h);
    if (it != token_to_id_.end()) honorific_ids_.push_back(it->second);
  }
  auto it = token_to_id_.find(kMasuMarker);
  masu_id_ = it == token_to_id_.end() ? -1 : it->second;
}

Vocabulary build_vocab(const CorpusSet& corpus, int min_freq,
                       TargetMode target_mode) {
  if (corpus.train.empty() && corpus.dev.empty() && corpus.test.empty())
    throw ValidationError("build_vocab: empty corpus");
  if (min_freq < 1) throw ValidationError("build_vocab: min_freq must be >= 1");

  std::map<std::string, std::int64_t> counts;
  for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test}) {
    for (const auto& doc : *split) {
      for (const auto& u : doc.utterances) {
        for (auto& tok : tokenize(u.source_text, Side::kSource, target_mode))
          counts[tok] += 1;
        for (auto& tok : tokenize(u.target_text, Side::kTarget, target_mode))
          counts[tok] += 1;
      }
    }
  }

  Vocabulary vocab;
  vocab.target_mode_ = target_mode;
  vocab.min_freq_ = min_freq;
  for (const auto& t : reserved_tokens()) vocab.install_token(t);

  // Atomic entries seen in the corpus keep their canonical order and bypass
  // the frequency threshold.
  for (const auto& entry : Vocabulary::atomic_entries()) {
    auto it = counts.find(entry);
    if (it != counts.end()) {
      vocab.install_token(entry);
      counts.erase(it);
    }
  }

  std::vector<std::pair<std::string, std::int64_t>> rest;
  rest.reserve(counts.size());
  for (const auto& [tok, n] : counts) {
    if (n >= min_freq && !vocab.contains(tok)) rest.emplace_back(tok, n);
  }
  std::sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [tok, n] : rest) {
    (void)n;
    vocab.install_token(tok);
  }

  vocab.rebuild_special_sets();
  return vocab;
}

TokenSequence encode(const std::string& text, const Vocabulary& vocab, Side side) {
  TokenSequence seq;
  seq.side = side;
  for (const auto& tok : tokenize(text, side, vocab.target_mode()))
    seq.ids.push_back(vocab.token_id(tok));
  return seq;
}

std::string decode(const TokenSequence& seq, const Vocabulary& vocab) {
  const bool join_with_spaces =
      seq.side == Side::kSource || vocab.target_mode() == TargetMode::kWord;
  std::string out;
  bool first = true;
  for (int id : seq.ids) {
    const std::string& tok = vocab.token(id);
    if (id == kPadId) continue;
    if (join_with_spaces && !first) out += ' ';
    out += tok;
    first = false;
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::ostringstream out;
  out << "# ctxmt-vocab v1 min_freq=" << min_freq_ << " target_mode="
      << (target_mode_ == TargetMode::kWord ? "word" : "character") << "\n";
  for (const auto& tok : id_to_token_) out << tok << "\n";
  return out.str();
}

Vocabulary Vocabulary::deserialize(const std::string& text) {
  Vocabulary vocab;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen && !line.empty() && line[0] == '#') {
      header_seen = true;
      std::istringstream hdr(line.substr(1));
      std::string field;
      while (hdr >> field) {
        if (field.rfind("min_freq=", 0) == 0)
          vocab.min_freq_ = std::stoi(field.substr(9));
        else if (field == "target_mode=word")
          vocab.target_mode_ = TargetMode::kWord;
        else if (field == "target_mode=character")
          vocab.target_mode_ = TargetMode::kCharacter;
      }
      continue;
    }
    vocab.install_token(line);
  }
  if (vocab.size() < kReservedCount)
    throw ValidationError("vocabulary file too short: missing reserved tokens");
  const auto reserved = reserved_tokens();
  for (int i = 0; i < kReservedCount; ++i) {
    if (vocab.id_to_token_[static_cast<std::size_t>(i)] != reserved[static_cast<std::size_t>(i)])
      throw ValidationError("vocabulary reserved slot " + std::to_string(i) +
                            " holds '" + vocab.id_to_token_[static_cast<std::size_t>(i)] +
                            "', expected '" + reserved[static_cast<std::size_t>(i)] + "'");
  }
  vocab.rebuild_special_sets();
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write: " + file.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open: " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

std::uint64_t Vocabulary::hash() const { return fnv1a64(serialize()); }

}  // namespace ctxmt

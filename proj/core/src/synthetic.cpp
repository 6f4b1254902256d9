#include "ctxmt/synthetic.hpp"

#include <numeric>
#include <sstream>

#include "ctxmt/error.hpp"
#include "ctxmt/rng.hpp"

namespace ctxmt {

void SynthSpec::validate() const {
  if (train_docs < 1) throw ValidationError("synth spec: train_docs must be >= 1");
  if (dev_docs < 0 || test_docs < 0)
    throw ValidationError("synth spec: negative split size");
  if (utterances_per_doc < 1)
    throw ValidationError("synth spec: utterances_per_doc must be >= 1");
  if (source_vocab < 8)
    throw ValidationError("synth spec: source_vocab must be >= 8");
  if (min_sentence_len < 1 || max_sentence_len < min_sentence_len)
    throw ValidationError("synth spec: invalid sentence length bounds");
  double total = std::accumulate(scene_weights.begin(), scene_weights.end(), 0.0);
  if (total <= 0.0) throw ValidationError("synth spec: scene weights sum to zero");
  for (double w : scene_weights)
    if (w < 0.0) throw ValidationError("synth spec: negative scene weight");
  if (speaker_change_prob < 0.0 || speaker_change_prob > 1.0)
    throw ValidationError("synth spec: speaker_change_prob out of [0,1]");
}

SynthSpec SynthSpec::preset(const std::string& name) {
  if (name == "default") return SynthSpec{};
  if (name == "marker-skew") {
    SynthSpec spec;
    spec.scene_weights = {0.0, 0.0, 0.5, 0.5, 0.0, 0.0};
    spec.speaker_change_prob = 0.1;
    return spec;
  }
  if (name == "tiny") {
    SynthSpec spec;
    spec.train_docs = 10;
    spec.dev_docs = 4;
    spec.test_docs = 4;
    spec.utterances_per_doc = 4;
    return spec;
  }
  throw ValidationError("unknown synth preset: " + name);
}

bool scene_forces_masu(SceneTag scene) {
  return scene == SceneTag::kMeeting || scene == SceneTag::kPresentation;
}

std::string expected_marker(const DialogueDocument& doc, int i) {
  if (scene_forces_masu(doc.scene)) return kMasuMarker;
  if (i > 0 &&
      doc.utterances[static_cast<std::size_t>(i)].speaker_id !=
          doc.utterances[static_cast<std::size_t>(i) - 1].speaker_id) {
    return kMasuMarker;
  }
  return kDaMarker;
}

namespace {

SceneTag draw_scene(Rng& rng, const std::array<double, kSceneCount>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double r = rng.uniform() * total;
  for (int i = 0; i < kSceneCount; ++i) {
    r -= weights[static_cast<std::size_t>(i)];
    if (r < 0.0) return static_cast<SceneTag>(i);
  }
  return static_cast<SceneTag>(kSceneCount - 1);
}

DialogueDocument generate_document(const SynthSpec& spec, Rng& rng,
                                   const std::string& doc_id) {
  static const std::array<std::string, 3> kSpeakers = {"A", "B", "C"};

  DialogueDocument doc;
  doc.doc_id = doc_id;
  doc.scene = draw_scene(rng, spec.scene_weights);

  const int speaker_count = rng.uniform_int(2, 3);
  int speaker = rng.uniform_int(0, speaker_count - 1);

  for (int i = 0; i < spec.utterances_per_doc; ++i) {
    if (i > 0 && rng.bernoulli(spec.speaker_change_prob)) {
      // switch to a uniformly chosen other speaker
      int offset = rng.uniform_int(1, speaker_count - 1);
      speaker = (speaker + offset) % speaker_count;
    }
    Utterance u;
    u.index = i;
    u.speaker_id = kSpeakers[static_cast<std::size_t>(speaker)];

    const int len = rng.uniform_int(spec.min_sentence_len, spec.max_sentence_len);
    std::ostringstream src, tgt;
    for (int t = 0; t < len; ++t) {
      const int w = rng.uniform_int(1, spec.source_vocab);
      if (t > 0) {
        src << ' ';
        tgt << ' ';
      }
      src << 'w' << w;
      tgt << 't' << w;  // fixed bijection wi -> ti
    }
    u.source_text = src.str();
    u.target_text = tgt.str();
    doc.utterances.push_back(std::move(u));

    doc.utterances.back().target_text += ' ';
    doc.utterances.back().target_text += expected_marker(doc, i);
  }
  return doc;
}

std::vector<DialogueDocument> generate_split(const SynthSpec& spec,
                                             std::uint64_t seed,
                                             const std::string& split_name,
                                             std::uint64_t split_index,
                                             int doc_count) {
  std::vector<DialogueDocument> docs;
  docs.reserve(static_cast<std::size_t>(doc_count));
  for (int d = 0; d < doc_count; ++d) {
    auto rng = Rng::derive(seed, {split_index, static_cast<std::uint64_t>(d)});
    std::ostringstream id;
    id << "synth-" << split_name << '-' << d;
    docs.push_back(generate_document(spec, rng, id.str()));
  }
  return docs;
}

}  // namespace

CorpusSet generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  CorpusSet corpus;
  corpus.train = generate_split(spec, seed, "train", 0, spec.train_docs);
  corpus.dev = generate_split(spec, seed, "dev", 1, spec.dev_docs);
  corpus.test = generate_split(spec, seed, "test", 2, spec.test_docs);

  std::ostringstream prov;
  prov << "synthetic:seed=" << seed << ",train_docs=" << spec.train_docs
       << ",dev_docs=" << spec.dev_docs << ",test_docs=" << spec.test_docs
       << ",utterances=" << spec.utterances_per_doc
       << ",source_vocab=" << spec.source_vocab
       << ",change_prob=" << spec.speaker_change_prob;
  corpus.provenance = prov.str();
  validate_corpus(corpus);
  return corpus;
}

}  // namespace ctxmt

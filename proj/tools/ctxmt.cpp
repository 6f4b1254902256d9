// Command-line front end for the context-aware translation laboratory:
// corpus ingestion/synthesis, vocabulary building, training, translation,
// BLEU, CXMI reports, and gradient verification.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ctxmt/checkpoint.hpp"
#include "ctxmt/contextizer.hpp"
#include "ctxmt/corpus.hpp"
#include "ctxmt/error.hpp"
#include "ctxmt/manifest.hpp"
#include "ctxmt/metrics.hpp"
#include "ctxmt/model.hpp"
#include "ctxmt/synthetic.hpp"
#include "ctxmt/tokenizer.hpp"
#include "ctxmt/trainer.hpp"

namespace fs = std::filesystem;
using namespace ctxmt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomainError = 1;
constexpr int kExitUsageError = 2;

std::map<std::string, std::string> collect_config(const CLI::App& cmd) {
  std::map<std::string, std::string> out;
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      std::string joined;
      for (const auto& r : opt->results()) {
        if (!joined.empty()) joined += ",";
        joined += r;
      }
      out[name] = joined.empty() ? "true" : joined;
    } else if (!opt->get_default_str().empty()) {
      out[name] = opt->get_default_str();
    }
  }
  return out;
}

RunManifest make_manifest(const CLI::App& cmd, std::uint64_t seed) {
  RunManifest m;
  m.command = cmd.get_name();
  m.config = collect_config(cmd);
  m.seed = seed;
  return m;
}

std::optional<SceneTag> parse_default_scene(const std::string& name) {
  if (name == "none") return std::nullopt;
  if (auto tag = parse_scene(name)) return tag;
  throw ValidationError("unknown scene name: " + name +
                        " (use one of the six scene names or 'none')");
}

void print_split_stats(const std::string& name, const SplitStats& stats) {
  std::cout << name << ": " << stats.sentences << " sentences, "
            << stats.scenarios << " scenarios, " << stats.speakers
            << " speakers\n";
  if (!stats.scene_histogram.empty()) {
    std::cout << "  scenes:";
    for (const auto& [tag, n] : stats.scene_histogram)
      std::cout << " " << scene_name(tag) << "=" << n;
    std::cout << "\n";
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

struct SharedArgs {
  std::uint64_t seed = 1;
  std::string out_dir = ".";
};

void add_shared(CLI::App* cmd, SharedArgs& args) {
  cmd->add_option("--seed", args.seed, "Deterministic seed")->capture_default_str();
  cmd->add_option("--out-dir", args.out_dir, "Directory for outputs and the run manifest")
      ->capture_default_str();
  // --config lives on the top-level app; let it reach past the subcommand
  cmd->fallthrough(true);
}

// ---- subcommand payloads ----------------------------------------------------

struct IngestArgs {
  SharedArgs shared;
  std::string input;
  std::string schema = kCorpusSchemaBsdJsonV1;
  std::string default_scene = "meeting";
};

int run_ingest(const CLI::App& cmd, const IngestArgs& args) {
  LoadOptions opts;
  opts.default_scene = parse_default_scene(args.default_scene);
  const CorpusSet corpus = load_corpus(args.input, args.schema, opts);
  const auto stats = corpus_stats(corpus);
  print_split_stats("train", stats.train);
  if (!corpus.dev.empty()) print_split_stats("dev", stats.dev);
  if (!corpus.test.empty()) print_split_stats("test", stats.test);

  auto manifest = make_manifest(cmd, args.shared.seed);
  if (fs::is_directory(args.input)) {
    for (const char* f : {"train.json", "dev.json", "test.json"})
      if (fs::exists(fs::path(args.input) / f))
        manifest.add_input(fs::path(args.input) / f);
  } else {
    manifest.add_input(args.input);
  }
  manifest.write(args.shared.out_dir);
  return kExitOk;
}

struct SynthArgs {
  SharedArgs shared;
  std::string preset = "default";
  int train_docs = -1, dev_docs = -1, test_docs = -1;
  int utterances = -1, vocab_size = -1;
  int min_len = -1, max_len = -1;
  double change_prob = -1.0;
  std::vector<double> scene_weights;
};

int run_synth(const CLI::App& cmd, const SynthArgs& args) {
  SynthSpec spec = SynthSpec::preset(args.preset);
  if (args.train_docs >= 0) spec.train_docs = args.train_docs;
  if (args.dev_docs >= 0) spec.dev_docs = args.dev_docs;
  if (args.test_docs >= 0) spec.test_docs = args.test_docs;
  if (args.utterances >= 0) spec.utterances_per_doc = args.utterances;
  if (args.vocab_size >= 0) spec.source_vocab = args.vocab_size;
  if (args.min_len >= 0) spec.min_sentence_len = args.min_len;
  if (args.max_len >= 0) spec.max_sentence_len = args.max_len;
  if (args.change_prob >= 0.0) spec.speaker_change_prob = args.change_prob;
  if (!args.scene_weights.empty()) {
    if (args.scene_weights.size() != kSceneCount)
      throw ValidationError("--scene-weights needs exactly 6 values");
    for (int i = 0; i < kSceneCount; ++i)
      spec.scene_weights[static_cast<std::size_t>(i)] =
          args.scene_weights[static_cast<std::size_t>(i)];
  }

  const CorpusSet corpus = generate_synthetic_corpus(spec, args.shared.seed);
  save_corpus(corpus, args.shared.out_dir);
  const auto stats = corpus_stats(corpus);
  print_split_stats("train", stats.train);
  print_split_stats("dev", stats.dev);
  print_split_stats("test", stats.test);

  auto manifest = make_manifest(cmd, args.shared.seed);
  for (const char* f : {"train.json", "dev.json", "test.json"})
    manifest.add_artifact(fs::path(args.shared.out_dir) / f);
  manifest.write(args.shared.out_dir);
  return kExitOk;
}

struct VocabArgs {
  SharedArgs shared;
  std::string corpus;
  std::string out = "vocab.txt";
  int min_freq = 1;
  std::string target_mode = "character";
};

int run_vocab(const CLI::App& cmd, const VocabArgs& args) {
  const CorpusSet corpus = load_corpus(args.corpus);
  const TargetMode mode = [&] {
    if (args.target_mode == "character") return TargetMode::kCharacter;
    if (args.target_mode == "word") return TargetMode::kWord;
    throw ValidationError("--target-mode must be 'character' or 'word'");
  }();
  const Vocabulary vocab = build_vocab(corpus, args.min_freq, mode);
  const fs::path out_path = fs::path(args.shared.out_dir) / args.out;
  fs::create_directories(args.shared.out_dir);
  vocab.save(out_path);
  std::cout << "vocabulary: " << vocab.size() << " tokens -> " << out_path.string()
            << "\n";

  auto manifest = make_manifest(cmd, args.shared.seed);
  if (fs::is_directory(args.corpus)) {
    for (const char* f : {"train.json", "dev.json", "test.json"})
      if (fs::exists(fs::path(args.corpus) / f))
        manifest.add_input(fs::path(args.corpus) / f);
  } else {
    manifest.add_input(args.corpus);
  }
  manifest.add_artifact(out_path);
  manifest.write(args.shared.out_dir);
  return kExitOk;
}

struct TrainArgs {
  SharedArgs shared;
  std::string corpus;
  std::string vocab;
  std::string family = "1-1";
  bool speaker_tags = false;
  bool scene_tag = false;
  bool dynamic = false;
  int max_src_len = 0, max_tgt_len = 0;
  // model
  int layers = 2, heads = 4, d_model = 128, d_ff = 256, max_positions = 256;
  double dropout = 0.1;
  // optimization
  int batch_size = 32, warmup = 400, max_epochs = 20, patience = 5,
      eval_interval = 0;
  double lr_scale = 1.0, label_smoothing = 0.1, grad_clip = 1.0, ema_decay = 0.0;
  std::string checkpoint_name = "model.ckpt";
  std::string dump_dataset_path;
};

int run_train(const CLI::App& cmd, const TrainArgs& args) {
  const CorpusSet corpus = load_corpus(args.corpus);
  const Vocabulary vocab = Vocabulary::load(args.vocab);

  ContextConfig ctx = ContextConfig::from_family(args.family);
  ctx.speaker_tags = args.speaker_tags;
  ctx.scene_tag = args.scene_tag;
  ctx.dynamic = args.dynamic;
  ctx.max_src_len = args.max_src_len;
  ctx.max_tgt_len = args.max_tgt_len;
  ctx.validate();

  ModelConfig mc;
  mc.layers_enc = args.layers;
  mc.layers_dec = args.layers;
  mc.heads = args.heads;
  mc.d_model = args.d_model;
  mc.d_ff = args.d_ff;
  mc.dropout = args.dropout;
  mc.max_positions = args.max_positions;
  mc.vocab_size = vocab.size();

  TrainConfig tc;
  tc.batch_size = args.batch_size;
  tc.warmup_steps = args.warmup;
  tc.lr_scale = args.lr_scale;
  tc.label_smoothing = args.label_smoothing;
  tc.grad_clip = args.grad_clip;
  tc.ema_decay = args.ema_decay;
  tc.max_epochs = args.max_epochs;
  tc.patience = args.patience;
  tc.eval_interval = args.eval_interval;
  tc.seed = args.shared.seed;

  fs::create_directories(args.shared.out_dir);
  const fs::path log_path = fs::path(args.shared.out_dir) / "train_log.jsonl";
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw IoError("cannot write: " + log_path.string());

  if (!args.dump_dataset_path.empty()) {
    const auto dataset = make_dataset(corpus.train, ctx, vocab,
                                      mix64(tc.seed, mix64(fnv1a64("data"), 0)));
    std::ofstream dump(fs::path(args.shared.out_dir) / args.dump_dataset_path,
                       std::ios::binary);
    dump << dump_dataset(dataset);
  }

  const auto result = train(corpus, ctx, mc, tc, vocab, [&](const TrainLogEntry& e) {
    nlohmann::ordered_json j;
    j["step"] = e.step;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["dev_loss"] = e.dev_loss;
    if (e.marker_accuracy) j["marker_accuracy"] = *e.marker_accuracy;
    j["lr"] = e.lr;
    j["wall_ms"] = e.wall_ms;
    log << j.dump() << "\n";
    log.flush();
    std::cout << "step " << e.step << " epoch " << e.epoch << " dev_loss "
              << e.dev_loss;
    if (e.marker_accuracy) std::cout << " marker_acc " << *e.marker_accuracy;
    std::cout << "\n";
  });

  if (result.diverged)
    std::cerr << "warning: training diverged; keeping the best checkpoint\n";

  Checkpoint ckpt;
  ckpt.params = result.best_params;
  ckpt.vocab_hash = vocab.hash();
  ckpt.context = ctx;
  const fs::path ckpt_path = fs::path(args.shared.out_dir) / args.checkpoint_name;
  save_checkpoint(ckpt, ckpt_path);
  std::cout << "best dev loss " << result.best_dev_loss << " at step "
            << result.best_step << " -> " << ckpt_path.string() << "\n";

  auto manifest = make_manifest(cmd, args.shared.seed);
  for (const char* f : {"train.json", "dev.json", "test.json"})
    if (fs::exists(fs::path(args.corpus) / f))
      manifest.add_input(fs::path(args.corpus) / f);
  manifest.add_input(args.vocab);
  manifest.add_artifact(ckpt_path);
  manifest.add_artifact(log_path);
  manifest.write(args.shared.out_dir);
  return result.diverged ? kExitDomainError : kExitOk;
}

void check_vocab_hash(const Checkpoint& ckpt, const Vocabulary& vocab) {
  if (ckpt.vocab_hash != vocab.hash())
    throw ValidationError(
        "vocabulary hash mismatch: the checkpoint was trained with a different "
        "vocabulary file");
}

struct TranslateArgs {
  SharedArgs shared;
  std::string checkpoint;
  std::string vocab;
  std::string corpus;
  std::string split = "test";
  std::string out = "hypotheses.txt";
  std::string refs_out;
  std::string strategy = "greedy";
  int beam_width = 4;
  int max_len = 0;  // 0 = from checkpoint context config
};

int run_translate(const CLI::App& cmd, const TranslateArgs& args) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const Vocabulary vocab = Vocabulary::load(args.vocab);
  check_vocab_hash(ckpt, vocab);
  const CorpusSet corpus = load_corpus(args.corpus);
  const auto& docs = corpus.split(args.split);
  if (docs.empty()) throw ValidationError("split is empty: " + args.split);

  ContextConfig ctx = ckpt.context;
  ctx.dynamic = false;

  GenerateOptions opts;
  opts.max_len = args.max_len > 0 ? args.max_len : ctx.effective_max_tgt_len();
  if (args.strategy == "greedy") {
    opts.beam_width = 1;
  } else if (args.strategy == "beam") {
    opts.beam_width = args.beam_width;
  } else {
    throw ValidationError("--strategy must be 'greedy' or 'beam'");
  }

  fs::create_directories(args.shared.out_dir);
  const fs::path out_path = fs::path(args.shared.out_dir) / args.out;
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + out_path.string());
  std::ofstream refs;
  if (!args.refs_out.empty()) {
    refs.open(fs::path(args.shared.out_dir) / args.refs_out, std::ios::binary);
    if (!refs) throw IoError("cannot write references file");
  }

  const bool target_context = ctx.k_tgt > 0;
  for (const auto& doc : docs) {
    for (int i = 0; i < static_cast<int>(doc.utterances.size()); ++i) {
      const auto src = build_source_input(doc, i, ctx, vocab);
      std::vector<int> generated;
      if (target_context) {
        // Gold target context is force-fed; only the current sentence is
        // generated.
        const auto tgt = build_target_output(doc, i, ctx, vocab);
        std::vector<int> prefix;
        for (std::size_t t = 0; t < tgt.ids.size(); ++t) {
          if (tgt.loss_mask[t]) break;
          prefix.push_back(tgt.ids[t]);
        }
        generated = forced_prefix_generate(ckpt.params, src.ids, src.context_mask,
                                           prefix, opts.max_len);
      } else {
        generated = generate(ckpt.params, src.ids, src.context_mask, opts);
      }
      std::vector<int> content;
      for (int id : generated)
        if (id != kEosId && id != kBosId && id != kPadId) content.push_back(id);
      out << decode(TokenSequence{content, Side::kTarget}, vocab) << "\n";
      if (refs.is_open())
        refs << doc.utterances[static_cast<std::size_t>(i)].target_text << "\n";
    }
  }
  out.close();

  auto manifest = make_manifest(cmd, args.shared.seed);
  manifest.add_input(args.checkpoint);
  manifest.add_input(args.vocab);
  manifest.add_artifact(out_path);
  manifest.write(args.shared.out_dir);
  return kExitOk;
}

struct BleuArgs {
  SharedArgs shared;
  std::string hyp;
  std::string ref;
  std::string mode = "char";
  bool smooth = false;
  std::string out;
};

int run_bleu(const CLI::App& cmd, const BleuArgs& args) {
  const auto hyps = read_lines(args.hyp);
  const auto refs = read_lines(args.ref);
  BleuOptions opts;
  if (args.mode == "char") {
    opts.mode = BleuMode::kCharacter;
  } else if (args.mode == "word") {
    opts.mode = BleuMode::kWhitespace;
  } else {
    throw ValidationError("--mode must be 'char' or 'word'");
  }
  opts.add_one_smoothing = args.smooth;
  const auto score = bleu(hyps, refs, opts);
  std::cout << format_bleu_summary(score);

  auto manifest = make_manifest(cmd, args.shared.seed);
  manifest.add_input(args.hyp);
  manifest.add_input(args.ref);
  if (!args.out.empty()) {
    const fs::path out_path = fs::path(args.shared.out_dir) / args.out;
    fs::create_directories(args.shared.out_dir);
    emit_bleu_summary(score, out_path);
    manifest.add_artifact(out_path);
  }
  manifest.write(args.shared.out_dir);
  return kExitOk;
}

struct CxmiArgs {
  SharedArgs shared;
  std::string checkpoint;
  std::string vocab;
  std::string corpus;
  std::string split = "test";
  std::vector<int> contexts;
  bool synthetic_honorifics = false;
  std::string out = "cxmi_report.tsv";
};

int run_cxmi(const CLI::App& cmd, const CxmiArgs& args) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const Vocabulary vocab = Vocabulary::load(args.vocab);
  check_vocab_hash(ckpt, vocab);
  const CorpusSet corpus = load_corpus(args.corpus);
  const auto& docs = corpus.split(args.split);
  if (docs.empty()) throw ValidationError("split is empty: " + args.split);

  std::vector<int> contexts = args.contexts;
  if (contexts.empty()) {
    for (int c = 1; c <= ckpt.context.k_max(); ++c) contexts.push_back(c);
    if (contexts.empty()) contexts.push_back(0);
  }
  std::sort(contexts.begin(), contexts.end());
  contexts.erase(std::unique(contexts.begin(), contexts.end()), contexts.end());

  const auto honorifics = vocab.honorific_ids(args.synthetic_honorifics);
  const auto agnostic = score_logprobs(ckpt.params, docs, ckpt.context, 0, vocab);

  std::vector<CxmiReport> reports;
  for (int c : contexts) {
    const auto aware = c == 0
                           ? agnostic
                           : score_logprobs(ckpt.params, docs, ckpt.context, c, vocab);
    CxmiReport report;
    report.context_size = c;
    report.corpus = cxmi(agnostic, aware);
    report.honorifics = honorifics_pcxmi(agnostic, aware, honorifics, vocab);
    reports.push_back(std::move(report));
  }

  fs::create_directories(args.shared.out_dir);
  const fs::path out_path = fs::path(args.shared.out_dir) / args.out;
  emit_cxmi_report(reports, out_path);
  std::cout << format_cxmi_report(reports);

  auto manifest = make_manifest(cmd, args.shared.seed);
  manifest.add_input(args.checkpoint);
  manifest.add_input(args.vocab);
  manifest.add_artifact(out_path);
  manifest.write(args.shared.out_dir);
  return kExitOk;
}

struct GradcheckArgs {
  SharedArgs shared;
  int d_model = 16, layers = 1, heads = 2, d_ff = 32;
  int probes = 200;
  double h = 1e-5;
  double tol = 1e-4;
};

int run_gradcheck(const CLI::App& cmd, const GradcheckArgs& args) {
  SynthSpec spec = SynthSpec::preset("tiny");
  const CorpusSet corpus = generate_synthetic_corpus(spec, args.shared.seed);
  const Vocabulary vocab = build_vocab(corpus, 1, TargetMode::kWord);

  ContextConfig ctx = ContextConfig::from_family("2-1");
  ctx.speaker_tags = true;
  ctx.scene_tag = true;

  ModelConfig mc;
  mc.layers_enc = args.layers;
  mc.layers_dec = args.layers;
  mc.heads = args.heads;
  mc.d_model = args.d_model;
  mc.d_ff = args.d_ff;
  mc.dropout = 0.0;
  mc.vocab_size = vocab.size();

  auto rng = Rng::derive(args.shared.seed, {fnv1a64("gradcheck-init")});
  const Parameters params = Parameters::init(mc, rng);
  const auto dataset = make_dataset(corpus.train, ctx, vocab);
  const auto& example = dataset.at(1);  // has context

  const auto result =
      finite_difference_check(params, example, args.probes, args.h, args.shared.seed);
  const bool pass = result.max_rel_err < args.tol;
  std::cout << "gradcheck: max_rel_err=" << result.max_rel_err
            << " probes=" << result.probes << " h=" << result.h
            << " tol=" << args.tol << " -> " << (pass ? "PASS" : "FAIL") << "\n";

  auto manifest = make_manifest(cmd, args.shared.seed);
  manifest.write(args.shared.out_dir);
  return pass ? kExitOk : kExitDomainError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware dialogue translation laboratory"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "INI config file; one [section] per subcommand, overridden by "
                 "explicit flags");

  IngestArgs ingest_args;
  auto* ingest = app.add_subcommand("ingest", "Validate a corpus and print statistics");
  add_shared(ingest, ingest_args.shared);
  ingest->add_option("--in", ingest_args.input, "Corpus file or directory")->required();
  ingest->add_option("--schema", ingest_args.schema, "Corpus schema id")
      ->capture_default_str();
  ingest->add_option("--default-scene", ingest_args.default_scene,
                     "Scene for documents without a known tag, or 'none'")
      ->capture_default_str();

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dialogue corpus");
  add_shared(synth, synth_args.shared);
  synth->add_option("--spec", synth_args.preset, "Preset: default, marker-skew, tiny")
      ->capture_default_str();
  synth->add_option("--train-docs", synth_args.train_docs, "Documents in train");
  synth->add_option("--dev-docs", synth_args.dev_docs, "Documents in dev");
  synth->add_option("--test-docs", synth_args.test_docs, "Documents in test");
  synth->add_option("--utterances", synth_args.utterances, "Utterances per document");
  synth->add_option("--vocab-size", synth_args.vocab_size, "Source vocabulary size");
  synth->add_option("--min-len", synth_args.min_len, "Minimum sentence length");
  synth->add_option("--max-len", synth_args.max_len, "Maximum sentence length");
  synth->add_option("--change-prob", synth_args.change_prob,
                    "Speaker change probability");
  synth->add_option("--scene-weights", synth_args.scene_weights,
                    "Six scene draw weights")
      ->expected(6);

  VocabArgs vocab_args;
  auto* vocab_cmd = app.add_subcommand("vocab", "Build a vocabulary from a corpus");
  add_shared(vocab_cmd, vocab_args.shared);
  vocab_cmd->add_option("--corpus", vocab_args.corpus, "Corpus file or directory")
      ->required();
  vocab_cmd->add_option("--out", vocab_args.out, "Vocabulary file name")
      ->capture_default_str();
  vocab_cmd->add_option("--min-freq", vocab_args.min_freq, "Frequency threshold")
      ->capture_default_str();
  vocab_cmd->add_option("--target-mode", vocab_args.target_mode,
                        "Target tokenization: character or word")
      ->capture_default_str();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model family");
  add_shared(train_cmd, train_args.shared);
  train_cmd->add_option("--corpus", train_args.corpus, "Corpus directory")->required();
  train_cmd->add_option("--vocab", train_args.vocab, "Vocabulary file")->required();
  train_cmd->add_option("--family", train_args.family,
                        "Model family: 1-1, 2-1 .. 5-1, 1-2 .. 1-5")
      ->capture_default_str();
  train_cmd->add_flag("--speaker-tags", train_args.speaker_tags,
                      "Prepend speaker-turn tags to context sentences");
  train_cmd->add_flag("--scene-tag", train_args.scene_tag,
                      "Prepend the scene token to the source input");
  train_cmd->add_flag("--dynamic", train_args.dynamic,
                      "Resample context size in [0,k] per example each epoch");
  train_cmd->add_option("--max-src-len", train_args.max_src_len,
                        "Source length cap (0 = 128/256 rule)");
  train_cmd->add_option("--max-tgt-len", train_args.max_tgt_len,
                        "Target length cap (0 = 128/256 rule)");
  train_cmd->add_option("--layers", train_args.layers, "Encoder/decoder layers")
      ->capture_default_str();
  train_cmd->add_option("--heads", train_args.heads, "Attention heads")
      ->capture_default_str();
  train_cmd->add_option("--d-model", train_args.d_model, "Model width")
      ->capture_default_str();
  train_cmd->add_option("--d-ff", train_args.d_ff, "Feed-forward width")
      ->capture_default_str();
  train_cmd->add_option("--dropout", train_args.dropout, "Dropout rate")
      ->capture_default_str();
  train_cmd->add_option("--max-positions", train_args.max_positions,
                        "Positional table size")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", train_args.batch_size, "Sentences per step")
      ->capture_default_str();
  train_cmd->add_option("--warmup", train_args.warmup, "Warmup steps")
      ->capture_default_str();
  train_cmd->add_option("--lr-scale", train_args.lr_scale, "Learning-rate scale")
      ->capture_default_str();
  train_cmd->add_option("--label-smoothing", train_args.label_smoothing,
                        "Label smoothing epsilon (0 disables)")
      ->capture_default_str();
  train_cmd->add_option("--grad-clip", train_args.grad_clip,
                        "Global-norm gradient clip (0 disables)")
      ->capture_default_str();
  train_cmd->add_option("--ema-decay", train_args.ema_decay,
                        "Per-step weight EMA; evaluation and the checkpoint "
                        "use the averaged weights (0 disables)")
      ->capture_default_str();
  train_cmd->add_option("--max-epochs", train_args.max_epochs, "Epoch cap")
      ->capture_default_str();
  train_cmd->add_option("--patience", train_args.patience,
                        "Evals without improvement before stopping")
      ->capture_default_str();
  train_cmd->add_option("--eval-interval", train_args.eval_interval,
                        "Steps between evals (0 = per epoch)")
      ->capture_default_str();
  train_cmd->add_option("--checkpoint-name", train_args.checkpoint_name,
                        "Checkpoint file name")
      ->capture_default_str();
  train_cmd->add_option("--dump-dataset", train_args.dump_dataset_path,
                        "Also dump the epoch-0 encoded dataset (JSONL)");

  TranslateArgs translate_args;
  auto* translate_cmd =
      app.add_subcommand("translate", "Generate translations for a split");
  add_shared(translate_cmd, translate_args.shared);
  translate_cmd->add_option("--checkpoint", translate_args.checkpoint, "Checkpoint file")
      ->required();
  translate_cmd->add_option("--vocab", translate_args.vocab, "Vocabulary file")
      ->required();
  translate_cmd->add_option("--corpus", translate_args.corpus, "Corpus directory")
      ->required();
  translate_cmd->add_option("--split", translate_args.split, "train, dev or test")
      ->capture_default_str();
  translate_cmd->add_option("--out", translate_args.out, "Hypotheses file name")
      ->capture_default_str();
  translate_cmd->add_option("--refs-out", translate_args.refs_out,
                            "Also write gold references to this file");
  translate_cmd->add_option("--strategy", translate_args.strategy, "greedy or beam")
      ->capture_default_str();
  translate_cmd->add_option("--beam-width", translate_args.beam_width, "Beam width")
      ->capture_default_str();
  translate_cmd->add_option("--max-len", translate_args.max_len,
                            "Total target length cap (0 = from checkpoint)");

  BleuArgs bleu_args;
  auto* bleu_cmd = app.add_subcommand("bleu", "Corpus BLEU between two line files");
  add_shared(bleu_cmd, bleu_args.shared);
  bleu_cmd->add_option("--hyp", bleu_args.hyp, "Hypotheses file")->required();
  bleu_cmd->add_option("--ref", bleu_args.ref, "References file")->required();
  bleu_cmd->add_option("--mode", bleu_args.mode, "char or word")->capture_default_str();
  bleu_cmd->add_flag("--smooth", bleu_args.smooth, "Add-one smoothing");
  bleu_cmd->add_option("--out", bleu_args.out, "Also write the summary to this file");

  CxmiArgs cxmi_args;
  auto* cxmi_cmd = app.add_subcommand(
      "cxmi", "Score context usage of one checkpoint (agnostic vs aware runs)");
  add_shared(cxmi_cmd, cxmi_args.shared);
  cxmi_cmd->add_option("--checkpoint", cxmi_args.checkpoint, "Checkpoint file")
      ->required();
  cxmi_cmd->add_option("--vocab", cxmi_args.vocab, "Vocabulary file")->required();
  cxmi_cmd->add_option("--corpus", cxmi_args.corpus, "Corpus directory")->required();
  cxmi_cmd->add_option("--split", cxmi_args.split, "train, dev or test")
      ->capture_default_str();
  cxmi_cmd->add_option("--context", cxmi_args.contexts,
                       "Context size(s) for the aware run (repeatable)");
  cxmi_cmd->add_flag("--synthetic-honorifics", cxmi_args.synthetic_honorifics,
                     "Count the synthetic +masu marker as an honorific");
  cxmi_cmd->add_option("--out", cxmi_args.out, "Report file name")
      ->capture_default_str();

  GradcheckArgs gradcheck_args;
  auto* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "Verify analytic gradients against central differences");
  add_shared(gradcheck_cmd, gradcheck_args.shared);
  gradcheck_cmd->add_option("--d-model", gradcheck_args.d_model, "Model width")
      ->capture_default_str();
  gradcheck_cmd->add_option("--layers", gradcheck_args.layers, "Layers per side")
      ->capture_default_str();
  gradcheck_cmd->add_option("--heads", gradcheck_args.heads, "Attention heads")
      ->capture_default_str();
  gradcheck_cmd->add_option("--d-ff", gradcheck_args.d_ff, "Feed-forward width")
      ->capture_default_str();
  gradcheck_cmd->add_option("--probes", gradcheck_args.probes, "Probed coordinates")
      ->capture_default_str();
  gradcheck_cmd->add_option("--fd-step", gradcheck_args.h, "Central-difference step")
      ->capture_default_str();
  gradcheck_cmd->add_option("--tol", gradcheck_args.tol, "Max relative error")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return kExitUsageError;
  }

  try {
    if (ingest->parsed()) return run_ingest(*ingest, ingest_args);
    if (synth->parsed()) return run_synth(*synth, synth_args);
    if (vocab_cmd->parsed()) return run_vocab(*vocab_cmd, vocab_args);
    if (train_cmd->parsed()) return run_train(*train_cmd, train_args);
    if (translate_cmd->parsed()) return run_translate(*translate_cmd, translate_args);
    if (bleu_cmd->parsed()) return run_bleu(*bleu_cmd, bleu_args);
    if (cxmi_cmd->parsed()) return run_cxmi(*cxmi_cmd, cxmi_args);
    if (gradcheck_cmd->parsed()) return run_gradcheck(*gradcheck_cmd, gradcheck_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomainError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitDomainError;
  }
  return kExitUsageError;
}

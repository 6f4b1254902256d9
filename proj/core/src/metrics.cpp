#include "ctxmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "ctxmt/error.hpp"
#include "ctxmt/trainer.hpp"
#include "ctxmt/utf8.hpp"

namespace ctxmt {

namespace {

void row_log_softmax(const double* row, int n, double* out) {
  double maxv = row[0];
  for (int i = 1; i < n; ++i) maxv = std::max(maxv, row[i]);
  double denom = 0.0;
  for (int i = 0; i < n; ++i) denom += std::exp(row[i] - maxv);
  const double lse = maxv + std::log(denom);
  for (int i = 0; i < n; ++i) out[i] = row[i] - lse;
}

}  // namespace

double SentenceLogProbs::sum() const {
  double s = 0.0;
  for (double v : log_probs) s += v;
  return s;
}

RunLogProbs score_logprobs(const Parameters& params,
                           std::span<const DialogueDocument> docs,
                           const ContextConfig& trained_cfg, int context_size,
                           const Vocabulary& vocab) {
  if (context_size < 0) throw ValidationError("context size must be >= 0");
  ContextConfig cfg = trained_cfg;
  cfg.dynamic = false;
  const bool target_side = trained_cfg.k_tgt > 0;
  if (context_size > trained_cfg.k_max()) {
    std::cerr << "warning: scoring context size " << context_size
              << " exceeds the trained context size " << trained_cfg.k_max()
              << "\n";
    if (target_side)
      cfg.k_tgt = context_size;
    else
      cfg.k_src = context_size;
  }

  RunLogProbs run;
  run.context_size = context_size;
  ForwardCache cache;
  std::vector<double> logp;
  for (const auto& doc : docs) {
    for (int i = 0; i < static_cast<int>(doc.utterances.size()); ++i) {
      EncodedExample ex;
      ex.doc_id = doc.doc_id;
      ex.index = i;
      auto src = build_source_input(doc, i, cfg, vocab,
                                    target_side ? std::optional<int>{}
                                                : std::optional<int>{context_size});
      auto tgt = build_target_output(doc, i, cfg, vocab,
                                     target_side ? std::optional<int>{context_size}
                                                 : std::optional<int>{});
      ex.source_ids = std::move(src.ids);
      ex.src_context_mask = std::move(src.context_mask);
      ex.target_ids = std::move(tgt.ids);
      ex.tgt_loss_mask = std::move(tgt.loss_mask);

      const Matrix logits = model_forward(params, ex, Mode::kEval, nullptr, &cache);
      const auto view = shifted_labels(ex);

      SentenceLogProbs rec;
      rec.doc_id = doc.doc_id;
      rec.index = i;
      rec.context_used = target_side ? tgt.used.target : src.used.source;
      logp.resize(static_cast<std::size_t>(logits.cols));
      for (int t = 0; t < logits.rows; ++t) {
        if (!view.mask[static_cast<std::size_t>(t)]) continue;
        row_log_softmax(logits.row(t), logits.cols, logp.data());
        const int gold = view.labels[static_cast<std::size_t>(t)];
        rec.gold_ids.push_back(gold);
        rec.log_probs.push_back(logp[static_cast<std::size_t>(gold)]);
      }
      run.sentences.push_back(std::move(rec));
    }
  }
  return run;
}

namespace {

void check_aligned(const RunLogProbs& a, const RunLogProbs& b) {
  if (a.sentences.size() != b.sentences.size())
    throw ValidationError("misaligned runs: sentence counts differ");
  for (std::size_t i = 0; i < a.sentences.size(); ++i) {
    const auto& sa = a.sentences[i];
    const auto& sb = b.sentences[i];
    if (sa.doc_id != sb.doc_id || sa.index != sb.index)
      throw ValidationError("misaligned runs at sentence " + std::to_string(i) +
                            ": " + sa.doc_id + "#" + std::to_string(sa.index) +
                            " vs " + sb.doc_id + "#" + std::to_string(sb.index));
    if (sa.gold_ids != sb.gold_ids)
      throw ValidationError("misaligned runs: gold tokens differ at " +
                            sa.doc_id + "#" + std::to_string(sa.index));
  }
}

}  // namespace

CxmiResult cxmi(const RunLogProbs& agnostic, const RunLogProbs& aware) {
  check_aligned(agnostic, aware);
  CxmiResult out;
  out.sentences = static_cast<std::int64_t>(agnostic.sentences.size());
  if (out.sentences == 0) throw ValidationError("cxmi over an empty run");
  out.per_sentence_delta.reserve(agnostic.sentences.size());
  double total = 0.0;
  for (std::size_t i = 0; i < agnostic.sentences.size(); ++i) {
    const double delta = aware.sentences[i].sum() - agnostic.sentences[i].sum();
    out.per_sentence_delta.push_back(delta);
    total += delta;
  }
  out.nats = total / static_cast<double>(out.sentences);
  out.bits = out.nats / std::log(2.0);
  return out;
}

std::optional<HonorificsResult> honorifics_pcxmi(const RunLogProbs& agnostic,
                                                 const RunLogProbs& aware,
                                                 std::span<const int> honorific_ids,
                                                 const Vocabulary& vocab) {
  check_aligned(agnostic, aware);
  if (honorific_ids.empty()) return std::nullopt;  // nothing to restrict to
  const std::set<int> ids(honorific_ids.begin(), honorific_ids.end());

  double total = 0.0;
  std::int64_t count = 0;
  std::map<int, std::pair<double, std::int64_t>> per_token;  // id -> (sum, n)
  for (std::size_t i = 0; i < agnostic.sentences.size(); ++i) {
    const auto& sa = agnostic.sentences[i];
    const auto& sc = aware.sentences[i];
    for (std::size_t j = 0; j < sa.gold_ids.size(); ++j) {
      const int gold = sa.gold_ids[j];
      if (!ids.count(gold)) continue;
      const double delta = sc.log_probs[j] - sa.log_probs[j];
      total += delta;
      count += 1;
      auto& slot = per_token[gold];
      slot.first += delta;
      slot.second += 1;
    }
  }
  if (count == 0) return std::nullopt;

  HonorificsResult out;
  out.pcxmi = total / static_cast<double>(count);
  out.token_count = count;
  for (const auto& [id, stats] : per_token) {
    HonorificTokenStats t;
    t.token_id = id;
    t.surface = id >= 0 && id < vocab.size() ? vocab.token(id)
                                             : "id:" + std::to_string(id);
    t.mean_delta = stats.first / static_cast<double>(stats.second);
    t.count = stats.second;
    out.breakdown.push_back(std::move(t));
  }
  std::sort(out.breakdown.begin(), out.breakdown.end(),
            [](const HonorificTokenStats& a, const HonorificTokenStats& b) {
              if (a.mean_delta != b.mean_delta) return a.mean_delta > b.mean_delta;
              return a.token_id < b.token_id;
            });
  return out;
}

namespace {

std::vector<std::string> bleu_tokens(const std::string& text, BleuMode mode) {
  if (mode == BleuMode::kCharacter) return utf8_chars(text);
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

using NgramCounts = std::map<std::vector<std::string>, std::int64_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t start = 0; start + static_cast<std::size_t>(n) <= tokens.size();
       ++start) {
    std::vector<std::string> gram(tokens.begin() + static_cast<long>(start),
                                  tokens.begin() + static_cast<long>(start) + n);
    counts[gram] += 1;
  }
  return counts;
}

}  // namespace

BleuScore bleu(std::span<const std::string> hypotheses,
               std::span<const std::string> references, const BleuOptions& opts) {
  if (hypotheses.size() != references.size())
    throw ValidationError("bleu: hypothesis/reference count mismatch");
  if (hypotheses.empty()) throw ValidationError("bleu: empty corpus");
  if (opts.max_n < 1) throw ValidationError("bleu: max_n must be >= 1");

  std::vector<std::int64_t> matches(static_cast<std::size_t>(opts.max_n), 0);
  std::vector<std::int64_t> totals(static_cast<std::size_t>(opts.max_n), 0);
  std::int64_t hyp_len = 0, ref_len = 0;

  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto hyp = bleu_tokens(hypotheses[i], opts.mode);
    const auto ref = bleu_tokens(references[i], opts.mode);
    hyp_len += static_cast<std::int64_t>(hyp.size());
    ref_len += static_cast<std::int64_t>(ref.size());
    for (int n = 1; n <= opts.max_n; ++n) {
      const auto hyp_counts = count_ngrams(hyp, n);
      const auto ref_counts = count_ngrams(ref, n);
      for (const auto& [gram, c] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        const std::int64_t clip = it == ref_counts.end() ? 0 : it->second;
        matches[static_cast<std::size_t>(n - 1)] += std::min(c, clip);
      }
      totals[static_cast<std::size_t>(n - 1)] +=
          std::max<std::int64_t>(0, static_cast<std::int64_t>(hyp.size()) - n + 1);
    }
  }

  BleuScore out;
  out.hyp_len = hyp_len;
  out.ref_len = ref_len;
  out.precisions.resize(static_cast<std::size_t>(opts.max_n), 0.0);
  double log_sum = 0.0;
  bool zero_precision = false;
  for (int n = 0; n < opts.max_n; ++n) {
    double m = static_cast<double>(matches[static_cast<std::size_t>(n)]);
    double t = static_cast<double>(totals[static_cast<std::size_t>(n)]);
    if (opts.add_one_smoothing) {
      m += 1.0;
      t += 1.0;
    }
    const double p = t > 0.0 ? m / t : 0.0;
    out.precisions[static_cast<std::size_t>(n)] = p;
    if (p <= 0.0)
      zero_precision = true;
    else
      log_sum += std::log(p);
  }

  if (hyp_len == 0 || zero_precision) {
    out.brevity_penalty =
        hyp_len > 0 && hyp_len < ref_len
            ? std::exp(1.0 - static_cast<double>(ref_len) / hyp_len)
            : 1.0;
    out.score = 0.0;
    return out;
  }
  out.brevity_penalty =
      hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / hyp_len)
                        : 1.0;
  out.score = 100.0 * out.brevity_penalty * std::exp(log_sum / opts.max_n);
  return out;
}

namespace {

std::string fixed(double v, int decimals) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(decimals);
  out << v;
  // normalize "-0.0000" to "0.0000"
  std::string s = out.str();
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-')
    s.erase(0, 1);
  return s;
}

}  // namespace

std::string format_cxmi_report(std::span<const CxmiReport> reports) {
  std::vector<const CxmiReport*> ordered;
  for (const auto& r : reports) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(),
            [](const CxmiReport* a, const CxmiReport* b) {
              return a->context_size < b->context_size;
            });

  std::ostringstream out;
  out << "context_size\tcxmi_nats\tcxmi_bits\tN\n";
  for (const auto* r : ordered) {
    out << r->context_size << '\t' << fixed(r->corpus.nats, 4) << '\t'
        << fixed(r->corpus.bits, 4) << '\t' << r->corpus.sentences << "\n";
  }
  for (const auto* r : ordered) {
    out << "honorifics\tcontext_size=" << r->context_size << "\n";
    if (!r->honorifics) {
      out << "absent\n";
      continue;
    }
    out << "p_cxmi\t" << fixed(r->honorifics->pcxmi, 4) << "\ttokens\t"
        << r->honorifics->token_count << "\n";
    out << "token\tmean_delta\tcount\n";
    for (const auto& t : r->honorifics->breakdown)
      out << t.surface << '\t' << fixed(t.mean_delta, 4) << '\t' << t.count << "\n";
  }
  return out.str();
}

void emit_cxmi_report(std::span<const CxmiReport> reports,
                      const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write report: " + file.string());
  out << format_cxmi_report(reports);
}

std::vector<CxmiReport> parse_cxmi_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "context_size\tcxmi_nats\tcxmi_bits\tN")
    throw ValidationError("bad CXMI report header");

  std::vector<CxmiReport> reports;
  while (std::getline(in, line)) {
    if (line.rfind("honorifics\t", 0) == 0) break;
    std::istringstream row(line);
    CxmiReport r;
    std::string nats, bits;
    if (!(row >> r.context_size >> nats >> bits >> r.corpus.sentences))
      throw ValidationError("bad CXMI report row: " + line);
    r.corpus.nats = std::stod(nats);
    r.corpus.bits = std::stod(bits);
    reports.push_back(std::move(r));
  }
  // honorifics sections; `line` currently holds the first section header
  std::size_t section = 0;
  while (in && line.rfind("honorifics\t", 0) == 0) {
    if (section >= reports.size())
      throw ValidationError("honorifics section without matching CXMI row");
    auto& report = reports[section];
    if (!std::getline(in, line)) break;
    if (line == "absent") {
      report.honorifics = std::nullopt;
      section += 1;
      if (!std::getline(in, line)) break;
      continue;
    }
    HonorificsResult hr;
    {
      std::istringstream row(line);
      std::string tag, tokens_tag;
      double pcxmi = 0.0;
      if (!(row >> tag >> pcxmi >> tokens_tag >> hr.token_count) || tag != "p_cxmi")
        throw ValidationError("bad honorifics summary: " + line);
      hr.pcxmi = pcxmi;
    }
    if (!std::getline(in, line) || line != "token\tmean_delta\tcount")
      throw ValidationError("bad honorifics table header");
    while (std::getline(in, line)) {
      if (line.rfind("honorifics\t", 0) == 0) break;
      if (line.empty()) continue;
      std::istringstream row(line);
      HonorificTokenStats t;
      if (!(row >> t.surface >> t.mean_delta >> t.count))
        throw ValidationError("bad honorifics row: " + line);
      hr.breakdown.push_back(std::move(t));
    }
    report.honorifics = std::move(hr);
    section += 1;
  }
  return reports;
}

std::string format_bleu_summary(const BleuScore& s) {
  std::ostringstream out;
  out << "BLEU=" << fixed(s.score, 2);
  for (std::size_t n = 0; n < s.precisions.size(); ++n)
    out << " p" << (n + 1) << "=" << fixed(s.precisions[n], 4);
  out << " BP=" << fixed(s.brevity_penalty, 4) << " hyp_len=" << s.hyp_len
      << " ref_len=" << s.ref_len << "\n";
  return out.str();
}

void emit_bleu_summary(const BleuScore& score, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write summary: " + file.string());
  out << format_bleu_summary(score);
}

}  // namespace ctxmt

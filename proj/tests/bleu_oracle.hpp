#pragma once

// Brute-force corpus BLEU used as an independent cross-check. Written as a
// second route on purpose: joined-string n-gram keys, long double arithmetic,
// no sharing with the library implementation.

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ctxmt/utf8.hpp"

namespace bleu_oracle {

inline std::vector<std::string> split_units(const std::string& text, bool by_char) {
  if (by_char) return ctxmt::utf8_chars(text);
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline std::map<std::string, long long> gram_table(
    const std::vector<std::string>& units, int n) {
  std::map<std::string, long long> table;
  for (long long s = 0; s + n <= static_cast<long long>(units.size()); ++s) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      key += units[static_cast<std::size_t>(s + j)];
      key += '\x1f';
    }
    table[key] += 1;
  }
  return table;
}

// Returns corpus BLEU in [0, 100].
inline double corpus_bleu(const std::vector<std::string>& hyps,
                          const std::vector<std::string>& refs, bool by_char,
                          bool add_one, int max_n = 4) {
  long long hyp_len = 0, ref_len = 0;
  std::vector<long long> hit(static_cast<std::size_t>(max_n), 0);
  std::vector<long long> all(static_cast<std::size_t>(max_n), 0);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = split_units(hyps[i], by_char);
    const auto r = split_units(refs[i], by_char);
    hyp_len += static_cast<long long>(h.size());
    ref_len += static_cast<long long>(r.size());
    for (int n = 1; n <= max_n; ++n) {
      const auto ht = gram_table(h, n);
      const auto rt = gram_table(r, n);
      for (const auto& [key, count] : ht) {
        const auto it = rt.find(key);
        hit[static_cast<std::size_t>(n - 1)] +=
            std::min(count, it == rt.end() ? 0LL : it->second);
        all[static_cast<std::size_t>(n - 1)] += count;
      }
    }
  }

  long double log_acc = 0.0L;
  for (int n = 0; n < max_n; ++n) {
    long double num = static_cast<long double>(hit[static_cast<std::size_t>(n)]);
    long double den = static_cast<long double>(all[static_cast<std::size_t>(n)]);
    if (add_one) {
      num += 1.0L;
      den += 1.0L;
    }
    if (num <= 0.0L || den <= 0.0L) return 0.0;
    log_acc += std::log(num / den);
  }
  if (hyp_len == 0) return 0.0;
  long double bp = 1.0L;
  if (hyp_len < ref_len)
    bp = std::exp(1.0L - static_cast<long double>(ref_len) /
                             static_cast<long double>(hyp_len));
  return static_cast<double>(100.0L * bp * std::exp(log_acc / max_n));
}

}  // namespace bleu_oracle

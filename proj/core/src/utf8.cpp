#include "ctxmt/utf8.hpp"

#include <array>
#include <cstdint>
#include <unordered_map>

#include "ctxmt/error.hpp"

namespace ctxmt {

namespace {

[[noreturn]] void bad(std::size_t pos) {
  throw ValidationError("invalid UTF-8 at byte offset " + std::to_string(pos));
}

// Kana NFC composition pairs: base + U+3099 (voiced) / U+309A (semi-voiced).
struct KanaPair {
  char32_t base;
  char32_t mark;
  char32_t composed;
};

constexpr std::array<KanaPair, 58> kKanaCompositions = {{
    // hiragana + voiced mark
    {0x304B, 0x3099, 0x304C}, {0x304D, 0x3099, 0x304E}, {0x304F, 0x3099, 0x3050},
    {0x3051, 0x3099, 0x3052}, {0x3053, 0x3099, 0x3054}, {0x3055, 0x3099, 0x3056},
    {0x3057, 0x3099, 0x3058}, {0x3059, 0x3099, 0x305A}, {0x305B, 0x3099, 0x305C},
    {0x305D, 0x3099, 0x305E}, {0x305F, 0x3099, 0x3060}, {0x3061, 0x3099, 0x3062},
    {0x3064, 0x3099, 0x3065}, {0x3066, 0x3099, 0x3067}, {0x3068, 0x3099, 0x3069},
    {0x306F, 0x3099, 0x3070}, {0x3072, 0x3099, 0x3073}, {0x3075, 0x3099, 0x3076},
    {0x3078, 0x3099, 0x3079}, {0x307B, 0x3099, 0x307C}, {0x3046, 0x3099, 0x3094},
    {0x309D, 0x3099, 0x309E},
    // hiragana + semi-voiced mark
    {0x306F, 0x309A, 0x3071}, {0x3072, 0x309A, 0x3074}, {0x3075, 0x309A, 0x3077},
    {0x3078, 0x309A, 0x307A}, {0x307B, 0x309A, 0x307D},
    // katakana + voiced mark
    {0x30AB, 0x3099, 0x30AC}, {0x30AD, 0x3099, 0x30AE}, {0x30AF, 0x3099, 0x30B0},
    {0x30B1, 0x3099, 0x30B2}, {0x30B3, 0x3099, 0x30B4}, {0x30B5, 0x3099, 0x30B6},
    {0x30B7, 0x3099, 0x30B8}, {0x30B9, 0x3099, 0x30BA}, {0x30BB, 0x3099, 0x30BC},
    {0x30BD, 0x3099, 0x30BE}, {0x30BF, 0x3099, 0x30C0}, {0x30C1, 0x3099, 0x30C2},
    {0x30C4, 0x3099, 0x30C5}, {0x30C6, 0x3099, 0x30C7}, {0x30C8, 0x3099, 0x30C9},
    {0x30CF, 0x3099, 0x30D0}, {0x30D2, 0x3099, 0x30D3}, {0x30D5, 0x3099, 0x30D6},
    {0x30D8, 0x3099, 0x30D9}, {0x30DB, 0x3099, 0x30DC}, {0x30A6, 0x3099, 0x30F4},
    {0x30EF, 0x3099, 0x30F7}, {0x30F0, 0x3099, 0x30F8}, {0x30F1, 0x3099, 0x30F9},
    {0x30F2, 0x3099, 0x30FA}, {0x30FD, 0x3099, 0x30FE},
    // katakana + semi-voiced mark
    {0x30CF, 0x309A, 0x30D1}, {0x30D2, 0x309A, 0x30D4}, {0x30D5, 0x309A, 0x30D7},
    {0x30D8, 0x309A, 0x30DA}, {0x30DB, 0x309A, 0x30DD},
}};

bool compose_kana(char32_t base, char32_t mark, char32_t* out) {
  for (const auto& p : kKanaCompositions) {
    if (p.base == base && p.mark == mark) {
      *out = p.composed;
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<char32_t> utf8_decode(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    char32_t cp = 0;
    std::size_t len = 0;
    if (b0 < 0x80) {
      cp = b0;
      len = 1;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      len = 2;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      len = 3;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      len = 4;
    } else {
      bad(i);
    }
    if (i + len > s.size()) bad(i);
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) bad(i + k);
      cp = (cp << 6) | (b & 0x3F);
    }
    // overlong encodings, surrogates, out-of-range
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
        (len == 4 && cp < 0x10000) || (cp >= 0xD800 && cp <= 0xDFFF) ||
        cp > 0x10FFFF) {
      bad(i);
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

std::string utf8_encode(const std::vector<char32_t>& cps) {
  std::string out;
  out.reserve(cps.size() * 3);
  for (char32_t cp : cps) out += utf8_encode(cp);
  return out;
}

std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (char32_t cp : utf8_decode(s)) out.push_back(utf8_encode(cp));
  return out;
}

std::string normalize_nfc(std::string_view s) {
  const auto cps = utf8_decode(s);
  std::vector<char32_t> out;
  out.reserve(cps.size());
  for (char32_t cp : cps) {
    if (!out.empty() && (cp == 0x3099 || cp == 0x309A)) {
      char32_t composed;
      if (compose_kana(out.back(), cp, &composed)) {
        out.back() = composed;
        continue;
      }
    }
    out.push_back(cp);
  }
  return utf8_encode(out);
}

}  // namespace ctxmt

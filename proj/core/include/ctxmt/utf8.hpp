#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ctxmt {

// Decodes UTF-8 into code points. Throws ValidationError on malformed input
// (truncated sequences, overlong encodings, surrogates, > U+10FFFF).
std::vector<char32_t> utf8_decode(std::string_view s);

std::string utf8_encode(const std::vector<char32_t>& cps);
std::string utf8_encode(char32_t cp);

// Splits a UTF-8 string into single-code-point strings.
std::vector<std::string> utf8_chars(std::string_view s);

// Validates UTF-8 and composes kana + combining (semi-)voiced sound marks
// (U+3099/U+309A), the NFC-relevant phenomenon for Japanese dialogue text.
// Other combining sequences pass through unchanged.
std::string normalize_nfc(std::string_view s);

}  // namespace ctxmt

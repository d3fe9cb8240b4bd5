#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rsvp::text {

// Strips emoji codepoints and URLs (scheme:// or www. runs up to whitespace),
// then collapses whitespace. Total and idempotent.
std::string preprocess(std::string_view text);

bool is_emoji(char32_t cp);

enum class TokenizerMode {
  whitespace,
  // Whitespace split, plus every CJK/kana/hangul codepoint becomes its own token.
  char_fallback,
};

std::vector<std::string> tokenize(std::string_view preprocessed, TokenizerMode mode);

TokenizerMode parse_tokenizer_mode(std::string_view name);
std::string_view to_string(TokenizerMode mode);

// UTF-8 helpers. Invalid bytes decode to themselves (as codepoints < 0x100)
// so no input is ever rejected.
std::vector<std::pair<char32_t, std::string_view>> utf8_codepoints(std::string_view s);

}  // namespace rsvp::text

#include "rsvp/text/preprocess.hpp"

#include <regex>
#include <stdexcept>

namespace rsvp::text {

namespace {

bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_unsegmented_script(char32_t cp) {
  return (cp >= 0x2E80 && cp <= 0x9FFF) || (cp >= 0xAC00 && cp <= 0xD7AF) ||
         (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0xFF00 && cp <= 0xFFEF) ||
         (cp >= 0x20000 && cp <= 0x2FFFF);
}

const std::regex& url_pattern() {
  static const std::regex re(R"((?:[A-Za-z][A-Za-z0-9+.\-]*://|www\.)[^ \t\n\r\v\f]*)");
  return re;
}

}  // namespace

std::vector<std::pair<char32_t, std::string_view>> utf8_codepoints(std::string_view s) {
  std::vector<std::pair<char32_t, std::string_view>> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = c;
    if (c >= 0xC2 && c <= 0xDF) {
      len = 2;
      cp = c & 0x1F;
    } else if (c >= 0xE0 && c <= 0xEF) {
      len = 3;
      cp = c & 0x0F;
    } else if (c >= 0xF0 && c <= 0xF4) {
      len = 4;
      cp = c & 0x07;
    }
    bool ok = len == 1 || i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (!ok) {
      len = 1;
      cp = c;
    }
    out.emplace_back(cp, s.substr(i, len));
    i += len;
  }
  return out;
}

bool is_emoji(char32_t cp) {
  return (cp >= 0x1F000 && cp <= 0x1FAFF)    // mahjong .. pictographs ext-A, incl. flags, skin tones
         || (cp >= 0x2600 && cp <= 0x27BF)   // misc symbols, dingbats
         || (cp >= 0x2B00 && cp <= 0x2BFF)   // misc symbols and arrows
         || (cp >= 0x2300 && cp <= 0x23FF)   // misc technical (watch, hourglass, ...)
         || (cp >= 0xFE00 && cp <= 0xFE0F)   // variation selectors
         || (cp >= 0xE0020 && cp <= 0xE007F) // tag sequences
         || cp == 0x200D || cp == 0x20E3;    // ZWJ, keycap
}

std::string preprocess(std::string_view text) {
  std::string no_emoji;
  no_emoji.reserve(text.size());
  for (const auto& [cp, bytes] : utf8_codepoints(text)) {
    if (!is_emoji(cp)) no_emoji.append(bytes);
  }
  const std::string no_url = std::regex_replace(no_emoji, url_pattern(), "");
  std::string out;
  out.reserve(no_url.size());
  bool pending_space = false;
  for (char c : no_url) {
    if (is_ascii_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view preprocessed, TokenizerMode mode) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  if (mode == TokenizerMode::whitespace) {
    for (char c : preprocessed) {
      if (is_ascii_space(c)) {
        flush();
      } else {
        current.push_back(c);
      }
    }
    flush();
    return tokens;
  }
  for (const auto& [cp, bytes] : utf8_codepoints(preprocessed)) {
    if (bytes.size() == 1 && is_ascii_space(bytes[0])) {
      flush();
    } else if (is_unsegmented_script(cp)) {
      flush();
      tokens.emplace_back(bytes);
    } else {
      current.append(bytes);
    }
  }
  flush();
  return tokens;
}

TokenizerMode parse_tokenizer_mode(std::string_view name) {
  if (name == "whitespace") return TokenizerMode::whitespace;
  if (name == "char_fallback") return TokenizerMode::char_fallback;
  throw std::invalid_argument("unknown tokenizer '" + std::string(name) +
                              "' (expected whitespace or char_fallback)");
}

std::string_view to_string(TokenizerMode mode) {
  return mode == TokenizerMode::whitespace ? "whitespace" : "char_fallback";
}

}  // namespace rsvp::text

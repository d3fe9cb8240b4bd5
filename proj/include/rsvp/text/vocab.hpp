#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rsvp/text/preprocess.hpp"

namespace rsvp::text {

// Token <-> id bijection. Ids 0..5 are the reserved tokens, in this order.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kBos = 4;
  static constexpr int kEos = 5;
  static constexpr std::size_t kReservedCount = 6;
  static const std::array<std::string, kReservedCount>& reserved();

  Vocab();

  // Counts tokens of preprocess(line) over the corpus; keeps those seen at
  // least min_freq times, ordered by descending frequency then bytewise.
  static Vocab build(std::span<const std::string> corpus, std::size_t min_freq = 1,
                     TokenizerMode mode = TokenizerMode::whitespace);
  // Validates the reserved prefix and uniqueness.
  static Vocab from_tokens(std::vector<std::string> tokens);

  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> ids(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace rsvp::text

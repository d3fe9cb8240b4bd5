#include "rsvp/text/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include "rsvp/error.hpp"

namespace rsvp::text {

const std::array<std::string, Vocab::kReservedCount>& Vocab::reserved() {
  static const std::array<std::string, kReservedCount> names{"[PAD]", "[UNK]", "[CLS]",
                                                             "[SEP]", "[BOS]", "[EOS]"};
  return names;
}

Vocab::Vocab() {
  for (const auto& t : reserved()) {
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReservedCount) {
    throw std::invalid_argument("vocab needs at least the " + std::to_string(kReservedCount) +
                                " reserved tokens");
  }
  for (std::size_t i = 0; i < kReservedCount; ++i) {
    if (tokens[i] != reserved()[i]) {
      throw std::invalid_argument("vocab id " + std::to_string(i) + " must be " + reserved()[i] +
                                  ", found '" + tokens[i] + "'");
    }
  }
  Vocab v;
  v.tokens_.clear();
  v.index_.clear();
  for (auto& t : tokens) {
    if (t.empty()) throw std::invalid_argument("vocab contains an empty token");
    const int id = static_cast<int>(v.tokens_.size());
    if (!v.index_.emplace(t, id).second) {
      throw std::invalid_argument("vocab token '" + t + "' appears twice");
    }
    v.tokens_.push_back(std::move(t));
  }
  return v;
}

Vocab Vocab::build(std::span<const std::string> corpus, std::size_t min_freq, TokenizerMode mode) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  const auto& res = reserved();
  for (const auto& line : corpus) {
    for (auto& tok : tokenize(preprocess(line), mode)) {
      if (std::find(res.begin(), res.end(), tok) != res.end()) continue;
      ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= std::max<std::size_t>(min_freq, 1)) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens(res.begin(), res.end());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return from_tokens(std::move(tokens));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError("empty token in " + path.string(), lineno);
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocab of " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::ids(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

}  // namespace rsvp::text

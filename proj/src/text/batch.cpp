#include "rsvp/text/batch.hpp"

#include <algorithm>
#include <stdexcept>

namespace rsvp::text {

TokenBatch TokenBatch::pack(std::span<const std::span<const int>> sequences, int pad_id) {
  if (sequences.empty()) throw std::invalid_argument("cannot pack an empty batch");
  TokenBatch b;
  b.batch = sequences.size();
  for (const auto& s : sequences) {
    if (s.empty()) throw std::invalid_argument("cannot pack an empty sequence");
    b.length = std::max(b.length, s.size());
  }
  b.ids.assign(b.batch * b.length, pad_id);
  b.valid.assign(b.batch * b.length, 0);
  for (std::size_t i = 0; i < b.batch; ++i) {
    std::copy(sequences[i].begin(), sequences[i].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.length));
    std::fill_n(b.valid.begin() + static_cast<std::ptrdiff_t>(i * b.length), sequences[i].size(), 1);
  }
  return b;
}

TokenBatch TokenBatch::single(std::span<const int> sequence) {
  std::span<const int> one[1] = {sequence};
  return pack(one, 0);
}

std::span<const int> TokenBatch::row(std::size_t b) const {
  return std::span<const int>(ids).subspan(b * length, row_length(b));
}

std::size_t TokenBatch::row_length(std::size_t b) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < length; ++j) n += valid[b * length + j];
  return n;
}

}  // namespace rsvp::text

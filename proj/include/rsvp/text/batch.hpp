#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace rsvp::text {

// Right-padded id matrix (batch x length) with a validity mask.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> valid;

  static TokenBatch pack(std::span<const std::span<const int>> sequences, int pad_id);
  static TokenBatch single(std::span<const int> sequence);

  std::span<const int> row(std::size_t b) const;
  std::size_t row_length(std::size_t b) const;
};

}  // namespace rsvp::text

#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <string_view>

namespace rsvp::num {

// Seeded generator with named, independent substreams. A substream's seed
// depends only on the parent seed and the name, never on how many values the
// parent has drawn, so variants that touch one stream leave the others alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  Rng substream(std::string_view name) const;
  Rng substream(std::uint64_t index) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double normal(double mean = 0.0, double stddev = 1.0);
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  // Fisher-Yates over any random-access range.
  template <typename Range>
  void shuffle(Range& range) {
    for (std::size_t i = range.size(); i > 1; --i) {
      std::size_t j = below(i);
      using std::swap;
      swap(range[i - 1], range[j]);
    }
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace rsvp::num

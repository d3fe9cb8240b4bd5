#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rsvp/text/dataset.hpp"

namespace rsvp::cli {

enum class VocabStyle {
  basic,
  // Adds emoji and URLs that preprocessing removes again.
  noisy,
};

VocabStyle parse_vocab_style(std::string_view name);
std::string_view to_string(VocabStyle s);

struct GenDataOptions {
  std::size_t n_intents = 5;
  std::size_t n_per_intent = 40;
  VocabStyle style = VocabStyle::basic;
  std::uint64_t seed = 7;
  // Fraction of records that also carry a second intent.
  double multi_intent_rate = 0;
};

// Each intent owns a keyword family that its utterances draw from, and a
// response template naming the fix. Utterance and response share an entity
// and a booking code so pairs are individually matchable.
std::vector<text::DialogueRecord> gen_data(const GenDataOptions& opts);

}  // namespace rsvp::cli

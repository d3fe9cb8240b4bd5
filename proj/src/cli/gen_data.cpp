#include "rsvp/cli/gen_data.hpp"

#include <array>
#include <optional>
#include <stdexcept>

#include "rsvp/numerics/rng.hpp"

namespace rsvp::cli {

namespace {

struct IntentFamily {
  std::string name;
  std::vector<std::string> keywords;
  std::string fix;
};

const std::vector<IntentFamily>& builtin_families() {
  static const std::vector<IntentFamily> f{
      {"refund", {"refund", "money", "back", "reimburse", "charged", "return"}, "issue a full refund to your card"},
      {"cancel_booking", {"cancel", "cancellation", "withdraw", "void", "abort", "drop"},
       "cancel the booking free of charge"},
      {"change_date", {"reschedule", "date", "postpone", "move", "later", "earlier"},
       "move your booking to the new date"},
      {"voucher_missing", {"voucher", "ticket", "qr", "email", "missing", "received"},
       "resend the voucher to your inbox"},
      {"payment_failed", {"payment", "declined", "failed", "transaction", "error", "bank"},
       "retry the payment with a new link"},
      {"pickup_location", {"pickup", "meeting", "point", "hotel", "where", "driver"},
       "share the pickup point and driver contact"},
      {"account_login", {"login", "password", "account", "locked", "signin", "reset"},
       "reset your password and unlock the account"},
      {"baggage", {"luggage", "baggage", "suitcase", "bags", "storage", "carry"},
       "arrange luggage storage at the counter"},
      {"weather_delay", {"weather", "rain", "typhoon", "storm", "delayed", "cancelled"},
       "rebook the tour after the weather clears"},
      {"invoice", {"invoice", "receipt", "tax", "company", "billing", "vat"},
       "send the invoice to your billing address"},
  };
  return f;
}

const std::array<std::string_view, 16> kEntities{"tokyo",  "osaka",   "kyoto",   "taipei", "seoul",  "bangkok",
                                                 "hanoi",  "bali",    "sapporo", "busan",  "tainan", "phuket",
                                                 "manila", "okinawa", "nara",    "hualien"};
const std::array<std::string_view, 8> kProducts{"tour", "pass", "cruise", "transfer", "excursion", "class",
                                                "show", "rental"};
const std::array<std::string_view, 6> kOpeners{"hi", "hello", "excuse me", "good morning", "hey there", "dear team"};
const std::array<std::string_view, 6> kClosers{"please help", "thanks", "can you check", "what should i do",
                                               "any update", "thank you"};
const std::array<std::string_view, 4> kEmoji{"\xF0\x9F\x98\x80", "\xF0\x9F\x99\x8F", "\xF0\x9F\x98\xA2",
                                             "\xE2\x9D\xA4"};

IntentFamily synthetic_family(std::size_t i) {
  IntentFamily f;
  f.name = "intent_" + std::to_string(i);
  for (std::size_t k = 0; k < 6; ++k) f.keywords.push_back("kw" + std::to_string(i) + "x" + std::to_string(k));
  f.fix = "apply resolution " + std::to_string(i) + " to your case";
  return f;
}

template <typename C>
const auto& pick(const C& c, num::Rng& rng) {
  return c[rng.below(c.size())];
}

std::string keyword_phrase(const IntentFamily& f, num::Rng& rng) {
  // Two or three distinct keywords from the family.
  std::vector<std::size_t> idx(f.keywords.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);
  const std::size_t n = 2 + rng.below(2);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += (i ? " " : "") + f.keywords[idx[i]];
  return out;
}

}  // namespace

VocabStyle parse_vocab_style(std::string_view name) {
  if (name == "basic") return VocabStyle::basic;
  if (name == "noisy") return VocabStyle::noisy;
  throw std::invalid_argument("unknown vocab style '" + std::string(name) + "' (basic, noisy)");
}

std::string_view to_string(VocabStyle s) { return s == VocabStyle::noisy ? "noisy" : "basic"; }

std::vector<text::DialogueRecord> gen_data(const GenDataOptions& opts) {
  if (opts.n_intents < 2) throw std::invalid_argument("gen-data needs at least 2 intents");
  if (opts.n_per_intent < 1) throw std::invalid_argument("gen-data needs at least 1 record per intent");
  if (!(opts.multi_intent_rate >= 0 && opts.multi_intent_rate <= 1))
    throw std::invalid_argument("multi_intent_rate must lie in [0, 1]");

  std::vector<IntentFamily> families;
  for (std::size_t i = 0; i < opts.n_intents; ++i)
    families.push_back(i < builtin_families().size() ? builtin_families()[i] : synthetic_family(i));

  const num::Rng root(opts.seed);
  auto rng = root.substream("generator");
  std::vector<text::DialogueRecord> out;
  std::size_t serial = 0;
  for (std::size_t k = 0; k < opts.n_per_intent; ++k) {
    for (std::size_t i = 0; i < opts.n_intents; ++i) {
      const auto& fam = families[i];
      const std::string entity(pick(kEntities, rng));
      const std::string product(pick(kProducts, rng));
      const std::string code = "bk" + std::to_string(1000 + serial);
      std::optional<std::size_t> second;
      if (opts.multi_intent_rate > 0 && rng.uniform() < opts.multi_intent_rate) {
        std::size_t j = rng.below(opts.n_intents - 1);
        second = j >= i ? j + 1 : j;
      }

      std::string u = std::string(pick(kOpeners, rng)) + " my " + entity + " " + product + " " + code + " " +
                      keyword_phrase(fam, rng);
      if (second) u += " and also " + keyword_phrase(families[*second], rng);
      u += " " + std::string(pick(kClosers, rng));
      std::string r = "sorry for the trouble with " + code + " we will " + fam.fix + " for the " + entity + " " +
                      product;
      if (second) r += " and " + families[*second].fix;

      text::DialogueRecord rec;
      rec.id = "syn-" + std::to_string(serial);
      if (opts.style == VocabStyle::noisy) {
        if (rng.below(2)) u += " " + std::string(pick(kEmoji, rng));
        if (rng.below(3) == 0) u += " see https://example.com/b/" + code;
        // Some dialogues arrive as two customer turns.
        if (rng.below(3) == 0) {
          rec.utterance_turns = {u, std::string(pick(kClosers, rng))};
        }
      }
      if (rec.utterance_turns.empty()) rec.utterance_turns = {u};
      rec.response_turns = {r};
      rec.intents = {fam.name};
      if (second) rec.intents.push_back(families[*second].name);
      out.push_back(std::move(rec));
      ++serial;
    }
  }
  return out;
}

}  // namespace rsvp::cli

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rsvp/text/preprocess.hpp"
#include "rsvp/text/vocab.hpp"

namespace rsvp::text {

// One dialogue: customer turns, agent turns, and its intent labels.
struct DialogueRecord {
  std::string id;
  std::vector<std::string> utterance_turns;
  std::vector<std::string> response_turns;
  std::vector<std::string> intents;

  bool operator==(const DialogueRecord&) const = default;
};

// Literal separator placed between concatenated turns; tokenizes to [SEP].
inline constexpr std::string_view kTurnSeparator = " [SEP] ";

struct FlatDialogue {
  std::string utterance;
  std::string response;
};

FlatDialogue flatten_dialogue(const DialogueRecord& rec);

// Ordered intent inventory C.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names);
  // Sorted union of every record's intents.
  static LabelSet from_records(std::span<const DialogueRecord> records);

  std::size_t size() const { return names_.size(); }
  int index(std::string_view name) const;  // throws naming the label
  bool contains(std::string_view name) const;
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

enum class LabelMode { single, multi };
enum class Truncation { right, left };

LabelMode parse_label_mode(std::string_view name);
std::string_view to_string(LabelMode mode);
Truncation parse_truncation(std::string_view name);
std::string_view to_string(Truncation t);

struct EncodeOptions {
  std::size_t max_utterance = 512;
  std::size_t max_response = 512;
  LabelMode mode = LabelMode::single;
  Truncation truncation = Truncation::right;
  TokenizerMode tokenizer = TokenizerMode::whitespace;
};

// Token-encoded record. Response access goes through response_ids(), which
// bumps a process-wide counter so stages can prove they never read it.
class EncodedExample {
 public:
  std::string id;
  std::vector<int> utterance_ids;
  // Gold class in single-label mode (-1 when the record carries no intent).
  int label = -1;
  // |C| flags in multi-label mode; also filled in single-label mode.
  std::vector<std::uint8_t> multi_hot;
  std::string first_intent;

  bool has_response() const { return !response_ids_.empty(); }
  const std::vector<int>& response_ids() const;
  void set_response_ids(std::vector<int> ids) { response_ids_ = std::move(ids); }

  static std::uint64_t response_reads();
  static void reset_response_reads();

 private:
  std::vector<int> response_ids_;
};

EncodedExample encode(const DialogueRecord& rec, const Vocab& vocab, const LabelSet& labels,
                      const EncodeOptions& opts);
std::vector<EncodedExample> encode_all(std::span<const DialogueRecord> records, const Vocab& vocab,
                                       const LabelSet& labels, const EncodeOptions& opts);

// Tokens of preprocess(text) with [CLS] (utterance side) or [BOS]/[EOS]
// (response side) framing and truncation to max_len.
std::vector<int> encode_utterance(std::string_view text, const Vocab& vocab, std::size_t max_len,
                                  Truncation t, TokenizerMode mode);
std::vector<int> encode_response(std::string_view text, const Vocab& vocab, std::size_t max_len,
                                 Truncation t, TokenizerMode mode);

// Schema per line: {"id", "utterance_turns": [...], "response_turns": [...],
// "intents": [...]}. Blank lines are skipped.
std::vector<DialogueRecord> load_jsonl(const std::filesystem::path& path,
                                       bool require_intents = true);
std::vector<DialogueRecord> parse_jsonl(std::string_view content, bool require_intents = true);
DialogueRecord parse_record(std::string_view line, std::size_t lineno, bool require_intents);
std::string record_to_json(const DialogueRecord& rec);
void write_jsonl(const std::filesystem::path& path, std::span<const DialogueRecord> records);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<DialogueRecord> train;
  std::vector<DialogueRecord> valid;
  std::vector<DialogueRecord> test;
};

// Stratified by first intent, deterministic under seed. Global sizes are
// round(N * ratio) for valid and test where strata allow; members of
// single-record strata always go to train. Each part keeps input order.
DatasetSplit split(std::span<const DialogueRecord> records, const SplitRatios& ratios,
                   std::uint64_t seed);

}  // namespace rsvp::text

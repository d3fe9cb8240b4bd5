#include "rsvp/text/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "rsvp/error.hpp"
#include "rsvp/numerics/rng.hpp"

namespace rsvp::text {

using json = nlohmann::json;

namespace {

std::atomic<std::uint64_t> g_response_reads{0};

std::string join_turns(const std::vector<std::string>& turns) {
  std::string out;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (i) out += kTurnSeparator;
    out += turns[i];
  }
  return out;
}

std::vector<std::string> string_array(const json& obj, const char* field, std::size_t lineno) {
  if (!obj.contains(field)) throw ParseError(std::string("missing field '") + field + "'", lineno);
  const auto& arr = obj.at(field);
  if (!arr.is_array()) throw ParseError(std::string("field '") + field + "' must be an array", lineno);
  std::vector<std::string> out;
  for (const auto& v : arr) {
    if (!v.is_string()) {
      throw ParseError(std::string("field '") + field + "' must contain only strings", lineno);
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

FlatDialogue flatten_dialogue(const DialogueRecord& rec) {
  return {join_turns(rec.utterance_turns), join_turns(rec.response_turns)};
}

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate intent label '" + names_[i] + "'");
    }
  }
}

LabelSet LabelSet::from_records(std::span<const DialogueRecord> records) {
  std::set<std::string> names;
  for (const auto& r : records) names.insert(r.intents.begin(), r.intents.end());
  return LabelSet(std::vector<std::string>(names.begin(), names.end()));
}

int LabelSet::index(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::invalid_argument("unknown intent label '" + std::string(name) + "'");
  }
  return it->second;
}

bool LabelSet::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

LabelMode parse_label_mode(std::string_view name) {
  if (name == "single") return LabelMode::single;
  if (name == "multi") return LabelMode::multi;
  throw std::invalid_argument("unknown label mode '" + std::string(name) + "' (single or multi)");
}

std::string_view to_string(LabelMode mode) { return mode == LabelMode::single ? "single" : "multi"; }

Truncation parse_truncation(std::string_view name) {
  if (name == "right") return Truncation::right;
  if (name == "left") return Truncation::left;
  throw std::invalid_argument("unknown truncation '" + std::string(name) + "' (right or left)");
}

std::string_view to_string(Truncation t) { return t == Truncation::right ? "right" : "left"; }

const std::vector<int>& EncodedExample::response_ids() const {
  g_response_reads.fetch_add(1, std::memory_order_relaxed);
  return response_ids_;
}

std::uint64_t EncodedExample::response_reads() { return g_response_reads.load(); }
void EncodedExample::reset_response_reads() { g_response_reads.store(0); }

namespace {

std::vector<int> keep_window(std::vector<int> ids, std::size_t budget, Truncation t) {
  if (ids.size() <= budget) return ids;
  if (t == Truncation::right) {
    ids.resize(budget);
    return ids;
  }
  return std::vector<int>(ids.end() - static_cast<std::ptrdiff_t>(budget), ids.end());
}

}  // namespace

std::vector<int> encode_utterance(std::string_view text, const Vocab& vocab, std::size_t max_len,
                                  Truncation t, TokenizerMode mode) {
  if (max_len < 1) throw std::invalid_argument("utterance length limit must be at least 1");
  auto body = keep_window(vocab.ids(tokenize(preprocess(text), mode)), max_len - 1, t);
  std::vector<int> ids;
  ids.reserve(body.size() + 1);
  ids.push_back(Vocab::kCls);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

std::vector<int> encode_response(std::string_view text, const Vocab& vocab, std::size_t max_len,
                                 Truncation t, TokenizerMode mode) {
  if (max_len < 2) throw std::invalid_argument("response length limit must be at least 2");
  auto body = keep_window(vocab.ids(tokenize(preprocess(text), mode)), max_len - 2, t);
  std::vector<int> ids;
  ids.reserve(body.size() + 2);
  ids.push_back(Vocab::kBos);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(Vocab::kEos);
  return ids;
}

EncodedExample encode(const DialogueRecord& rec, const Vocab& vocab, const LabelSet& labels,
                      const EncodeOptions& opts) {
  if (opts.mode == LabelMode::single && rec.intents.size() > 1) {
    throw std::invalid_argument("record '" + rec.id + "' has " + std::to_string(rec.intents.size()) +
                                " intents in single-label mode");
  }
  const auto flat = flatten_dialogue(rec);
  EncodedExample ex;
  ex.id = rec.id;
  ex.utterance_ids =
      encode_utterance(flat.utterance, vocab, opts.max_utterance, opts.truncation, opts.tokenizer);
  if (!rec.response_turns.empty()) {
    ex.set_response_ids(
        encode_response(flat.response, vocab, opts.max_response, opts.truncation, opts.tokenizer));
  }
  ex.multi_hot.assign(labels.size(), 0);
  for (const auto& name : rec.intents) ex.multi_hot[static_cast<std::size_t>(labels.index(name))] = 1;
  if (!rec.intents.empty()) {
    ex.label = labels.index(rec.intents.front());
    ex.first_intent = rec.intents.front();
  }
  return ex;
}

std::vector<EncodedExample> encode_all(std::span<const DialogueRecord> records, const Vocab& vocab,
                                       const LabelSet& labels, const EncodeOptions& opts) {
  std::vector<EncodedExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode(r, vocab, labels, opts));
  return out;
}

DialogueRecord parse_record(std::string_view line, std::size_t lineno, bool require_intents) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
  }
  if (!obj.is_object()) throw ParseError("record must be a JSON object", lineno);
  DialogueRecord rec;
  if (obj.contains("id")) {
    const auto& id = obj.at("id");
    rec.id = id.is_string() ? id.get<std::string>() : id.dump();
  } else {
    rec.id = "line-" + std::to_string(lineno);
  }
  rec.utterance_turns = string_array(obj, "utterance_turns", lineno);
  if (rec.utterance_turns.empty()) throw ParseError("'utterance_turns' is empty", lineno);
  if (obj.contains("response_turns")) rec.response_turns = string_array(obj, "response_turns", lineno);
  if (obj.contains("intents")) {
    rec.intents = string_array(obj, "intents", lineno);
  }
  if (require_intents && rec.intents.empty()) {
    throw ParseError("missing or empty field 'intents'", lineno);
  }
  return rec;
}

std::vector<DialogueRecord> parse_jsonl(std::string_view content, bool require_intents) {
  std::vector<DialogueRecord> out;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    auto end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    auto line = content.substr(pos, end - pos);
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) {
      out.push_back(parse_record(line, lineno, require_intents));
    }
    pos = end + 1;
  }
  return out;
}

std::vector<DialogueRecord> load_jsonl(const std::filesystem::path& path, bool require_intents) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_jsonl(ss.str(), require_intents);
}

std::string record_to_json(const DialogueRecord& rec) {
  json obj;
  obj["id"] = rec.id;
  obj["utterance_turns"] = rec.utterance_turns;
  obj["response_turns"] = rec.response_turns;
  obj["intents"] = rec.intents;
  return obj.dump();
}

void write_jsonl(const std::filesystem::path& path, std::span<const DialogueRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& r : records) out << record_to_json(r) << '\n';
}

DatasetSplit split(std::span<const DialogueRecord> records, const SplitRatios& ratios,
                   std::uint64_t seed) {
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must be nonnegative and sum to 1");
  }
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    strata[r.intents.empty() ? std::string() : r.intents.front()].push_back(i);
  }

  struct Alloc {
    std::size_t size = 0, valid = 0, test = 0;
    double frac_valid = 0, frac_test = 0;
  };
  std::vector<Alloc> alloc;
  std::size_t base_valid = 0, base_test = 0;
  for (auto& [name, members] : strata) {
    Alloc a;
    a.size = members.size();
    if (a.size >= 2) {
      const double ev = static_cast<double>(a.size) * ratios.valid;
      const double et = static_cast<double>(a.size) * ratios.test;
      a.valid = static_cast<std::size_t>(std::floor(ev + 1e-9));
      a.test = static_cast<std::size_t>(std::floor(et + 1e-9));
      a.frac_valid = ev - static_cast<double>(a.valid);
      a.frac_test = et - static_cast<double>(a.test);
    }
    base_valid += a.valid;
    base_test += a.test;
    alloc.push_back(a);
  }
  const double n = static_cast<double>(records.size());
  const auto target_valid = static_cast<std::size_t>(std::llround(n * ratios.valid));
  const auto target_test = static_cast<std::size_t>(std::llround(n * ratios.test));

  // Largest-remainder top-up, one extra slot per stratum at most.
  auto top_up = [&](std::size_t base, std::size_t target, bool valid_side) {
    std::vector<std::size_t> order(alloc.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      const double fx = valid_side ? alloc[x].frac_valid : alloc[x].frac_test;
      const double fy = valid_side ? alloc[y].frac_valid : alloc[y].frac_test;
      return fx > fy;
    });
    std::size_t missing = target > base ? target - base : 0;
    for (std::size_t s : order) {
      if (missing == 0) break;
      auto& a = alloc[s];
      const double frac = valid_side ? a.frac_valid : a.frac_test;
      if (a.size < 2 || frac <= 0.0 || a.valid + a.test + 1 > a.size) continue;
      (valid_side ? a.valid : a.test) += 1;
      --missing;
    }
  };
  top_up(base_valid, target_valid, true);
  top_up(base_test, target_test, false);

  num::Rng rng(seed);
  std::vector<std::uint8_t> part(records.size(), 0);  // 0 train, 1 valid, 2 test
  std::size_t s = 0;
  for (auto& [name, members] : strata) {
    auto shuffled = members;
    rng.shuffle(shuffled);
    const auto& a = alloc[s++];
    for (std::size_t k = 0; k < shuffled.size(); ++k) {
      part[shuffled[k]] = k < a.test ? 2 : k < a.test + a.valid ? 1 : 0;
    }
  }
  DatasetSplit out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (part[i] == 0 ? out.train : part[i] == 1 ? out.valid : out.test).push_back(records[i]);
  }
  return out;
}

}  // namespace rsvp::text

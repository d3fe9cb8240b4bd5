#include "rsvp/trainer/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rsvp/error.hpp"
#include "rsvp/text/vocab.hpp"

namespace rsvp::train {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw std::invalid_argument("invalid value '" + std::string(value) + "' for key '" + std::string(key) +
                              "' (expected " + std::string(want) + ")");
}

template <typename U>
U parse_uint(std::string_view key, std::string_view v) {
  U out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a nonnegative integer");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a real number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

std::vector<std::uint64_t> parse_seeds(std::string_view key, std::string_view v) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto piece = trim(v.substr(start, comma == std::string_view::npos ? v.size() - start : comma - start));
    out.push_back(parse_uint<std::uint64_t>(key, piece));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename E>
E parse_enum(std::string_view key, std::string_view v, std::initializer_list<std::pair<std::string_view, E>> opts) {
  std::string want;
  for (const auto& [name, value] : opts) {
    if (v == name) return value;
    want += (want.empty() ? "" : "|") + std::string(name);
  }
  bad_value(key, v, want);
}

struct Field {
  std::string_view name;
  std::function<std::string(const StageConfig&)> get;
  std::function<void(StageConfig&, std::string_view key, std::string_view value)> set;
};

#define SIZE_FIELD(f)                                                                 \
  Field{#f, [](const StageConfig& c) { return std::to_string(c.f); },                \
        [](StageConfig& c, std::string_view k, std::string_view v) { c.f = parse_uint<std::size_t>(k, v); }}
#define U64_FIELD(f)                                                                  \
  Field{#f, [](const StageConfig& c) { return std::to_string(c.f); },                \
        [](StageConfig& c, std::string_view k, std::string_view v) { c.f = parse_uint<std::uint64_t>(k, v); }}
#define DOUBLE_FIELD(f)                                                               \
  Field{#f, [](const StageConfig& c) { return fmt_double(c.f); },                    \
        [](StageConfig& c, std::string_view k, std::string_view v) { c.f = parse_double(k, v); }}
#define BOOL_FIELD(f)                                                                 \
  Field{#f, [](const StageConfig& c) { return std::string(c.f ? "true" : "false"); }, \
        [](StageConfig& c, std::string_view k, std::string_view v) { c.f = parse_bool(k, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SIZE_FIELD(retrieval_epochs),
      SIZE_FIELD(generation_epochs),
      SIZE_FIELD(finetune_epochs),
      SIZE_FIELD(pretrain_batch),
      SIZE_FIELD(finetune_batch),
      DOUBLE_FIELD(lr),
      DOUBLE_FIELD(tau),
      DOUBLE_FIELD(lambda),
      DOUBLE_FIELD(dropout_p),
      Field{"seeds", [](const StageConfig& c) { return fmt_seeds(c.seeds); },
            [](StageConfig& c, std::string_view k, std::string_view v) { c.seeds = parse_seeds(k, v); }},
      SIZE_FIELD(max_len),
      Field{"precision", [](const StageConfig& c) { return std::string(to_string(c.precision)); },
            [](StageConfig& c, std::string_view k, std::string_view v) {
              c.precision = parse_enum<Precision>(k, v, {{"float32", Precision::float32}, {"float64", Precision::float64}});
            }},
      Field{"task_order", [](const StageConfig& c) { return std::string(to_string(c.task_order)); },
            [](StageConfig& c, std::string_view k, std::string_view v) {
              c.task_order = parse_enum<TaskOrder>(
                  k, v, {{"retrieval_first", TaskOrder::retrieval_first}, {"generation_first", TaskOrder::generation_first}});
            }},
      BOOL_FIELD(use_retrieval),
      BOOL_FIELD(use_generation),
      BOOL_FIELD(use_uns_cl),
      Field{"mode", [](const StageConfig& c) { return std::string(text::to_string(c.mode)); },
            [](StageConfig& c, std::string_view k, std::string_view v) {
              c.mode = parse_enum<text::LabelMode>(k, v, {{"single", text::LabelMode::single}, {"multi", text::LabelMode::multi}});
            }},
      SIZE_FIELD(d_model),
      SIZE_FIELD(n_layers),
      SIZE_FIELD(n_heads),
      SIZE_FIELD(d_ffn),
      SIZE_FIELD(pooled_dim),
      BOOL_FIELD(tie_lm_head),
      DOUBLE_FIELD(weight_decay),
      U64_FIELD(seed),
      DOUBLE_FIELD(train_ratio),
      DOUBLE_FIELD(valid_ratio),
      DOUBLE_FIELD(test_ratio),
      SIZE_FIELD(min_freq),
      Field{"tokenizer", [](const StageConfig& c) { return std::string(text::to_string(c.tokenizer)); },
            [](StageConfig& c, std::string_view k, std::string_view v) {
              c.tokenizer = parse_enum<text::TokenizerMode>(
                  k, v, {{"whitespace", text::TokenizerMode::whitespace}, {"char_fallback", text::TokenizerMode::char_fallback}});
            }},
      Field{"truncation", [](const StageConfig& c) { return std::string(text::to_string(c.truncation)); },
            [](StageConfig& c, std::string_view k, std::string_view v) {
              c.truncation = parse_enum<text::Truncation>(k, v, {{"right", text::Truncation::right}, {"left", text::Truncation::left}});
            }},
      Field{"selection", [](const StageConfig& c) { return std::string(to_string(c.selection)); },
            [](StageConfig& c, std::string_view k, std::string_view v) {
              c.selection = parse_enum<Selection>(k, v, {{"best_valid", Selection::best_valid}, {"final", Selection::final}});
            }},
      Field{"gen_loss_reduction", [](const StageConfig& c) { return std::string(obj::to_string(c.gen_loss_reduction)); },
            [](StageConfig& c, std::string_view k, std::string_view v) {
              c.gen_loss_reduction = parse_enum<obj::GenReduction>(
                  k, v, {{"token_mean", obj::GenReduction::token_mean}, {"sequence_sum", obj::GenReduction::sequence_sum}});
            }},
      SIZE_FIELD(eval_batch),
      SIZE_FIELD(generation_max_pairs),
  };
  return table;
}

}  // namespace

std::string_view to_string(TaskOrder v) {
  return v == TaskOrder::retrieval_first ? "retrieval_first" : "generation_first";
}
std::string_view to_string(Selection v) { return v == Selection::best_valid ? "best_valid" : "final"; }
std::string_view to_string(Precision v) { return v == Precision::float32 ? "float32" : "float64"; }

void StageConfig::validate() const {
  if (pretrain_batch < 1) throw std::invalid_argument("pretrain_batch must be at least 1");
  if (finetune_batch < 1) throw std::invalid_argument("finetune_batch must be at least 1");
  if (eval_batch < 1) throw std::invalid_argument("eval_batch must be at least 1");
  if (!(lr > 0)) throw std::invalid_argument("lr must be positive");
  if (!(tau > 0)) throw std::invalid_argument("tau must be positive");
  if (!(lambda >= 0)) throw std::invalid_argument("lambda must be nonnegative");
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be nonnegative");
  if (seeds.empty()) throw std::invalid_argument("seeds must list at least one seed");
  if (max_len < 2) throw std::invalid_argument("max_len must be at least 2");
  encoder_config(text::Vocab::kReservedCount + 1).validate();
}

model::EncoderConfig StageConfig::encoder_config(std::size_t vocab_size) const {
  model::EncoderConfig c;
  c.vocab_size = vocab_size;
  c.d_model = d_model;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.d_ffn = d_ffn;
  c.dropout_p = dropout_p;
  c.max_positions = max_len;
  c.pooled_dim = pooled_dim;
  c.tie_lm_head = tie_lm_head;
  return c;
}

text::EncodeOptions StageConfig::encode_options() const {
  text::EncodeOptions o;
  o.max_utterance = max_len;
  o.max_response = max_len;
  o.mode = mode;
  o.truncation = truncation;
  o.tokenizer = tokenizer;
  return o;
}

num::AdamWOptions StageConfig::adamw() const {
  num::AdamWOptions o;
  o.lr = lr;
  o.weight_decay = weight_decay;
  return o;
}

std::vector<std::pair<std::string, std::string>> to_key_values(const StageConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(std::string(f.name), f.get(cfg));
  return out;
}

void set_value(StageConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.name == key) {
      f.set(cfg, key, trim(value));
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

void apply_override(StageConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw std::invalid_argument("override '" + std::string(assignment) + "' is not of the form key=value");
  set_value(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

StageConfig parse_config(std::string_view content, StageConfig base) {
  std::size_t lineno = 0, start = 0;
  while (start < content.size()) {
    auto end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    ++lineno;
    auto line = content.substr(start, end - start);
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    try {
      apply_override(base, line);
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return base;
}

StageConfig load_config(const std::filesystem::path& path, StageConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ":" + std::to_string(e.line()) + ": " + e.what());
  }
}

std::string render_config(const StageConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : to_key_values(cfg)) out += k + " = " + v + "\n";
  return out;
}

void to_json(nlohmann::json& j, const StageConfig& cfg) {
  j = nlohmann::json::object();
  for (const auto& [k, v] : to_key_values(cfg)) j[k] = v;
}

StageConfig config_from_json(const nlohmann::json& j) {
  StageConfig cfg;
  for (const auto& [k, v] : j.items()) set_value(cfg, k, v.get<std::string>());
  return cfg;
}

}  // namespace rsvp::train

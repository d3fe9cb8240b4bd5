#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rsvp/model/encoder.hpp"
#include "rsvp/numerics/optim.hpp"
#include "rsvp/objectives/losses.hpp"
#include "rsvp/text/dataset.hpp"

namespace rsvp::train {

enum class TaskOrder { retrieval_first, generation_first };
enum class Selection { best_valid, final };
enum class Precision { float32, float64 };

struct StageConfig {
  std::size_t retrieval_epochs = 10;
  std::size_t generation_epochs = 10;
  std::size_t finetune_epochs = 15;
  std::size_t pretrain_batch = 16;
  std::size_t finetune_batch = 10;
  double lr = 2e-5;
  double tau = 0.8;
  double lambda = 0.5;
  double dropout_p = 0.1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t max_len = 512;
  Precision precision = Precision::float32;
  TaskOrder task_order = TaskOrder::retrieval_first;

  // Stage switches for ablations and baselines.
  bool use_retrieval = true;
  bool use_generation = true;
  bool use_uns_cl = true;

  text::LabelMode mode = text::LabelMode::single;

  std::size_t d_model = 128;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  std::size_t pooled_dim = 128;
  bool tie_lm_head = false;

  double weight_decay = 0.01;
  // Data split and vocabulary.
  std::uint64_t seed = 42;
  double train_ratio = 0.8;
  double valid_ratio = 0.1;
  double test_ratio = 0.1;
  std::size_t min_freq = 1;
  text::TokenizerMode tokenizer = text::TokenizerMode::whitespace;
  text::Truncation truncation = text::Truncation::right;

  Selection selection = Selection::best_valid;
  obj::GenReduction gen_loss_reduction = obj::GenReduction::token_mean;
  std::size_t eval_batch = 32;
  // 0 uses every training pair in the generation stage.
  std::size_t generation_max_pairs = 0;

  void validate() const;
  bool operator==(const StageConfig&) const = default;

  model::EncoderConfig encoder_config(std::size_t vocab_size) const;
  text::EncodeOptions encode_options() const;
  text::SplitRatios split_ratios() const { return {train_ratio, valid_ratio, test_ratio}; }
  num::AdamWOptions adamw() const;
};

std::string_view to_string(TaskOrder v);
std::string_view to_string(Selection v);
std::string_view to_string(Precision v);

// Every key in declaration order with its value rendered as text.
std::vector<std::pair<std::string, std::string>> to_key_values(const StageConfig& cfg);
// Throws std::invalid_argument naming the key on unknown keys or bad values.
void set_value(StageConfig& cfg, std::string_view key, std::string_view value);
// "key=value"
void apply_override(StageConfig& cfg, std::string_view assignment);

// Flat "key = value" lines; '#' starts a comment. Errors carry the line.
StageConfig parse_config(std::string_view content, StageConfig base = {});
StageConfig load_config(const std::filesystem::path& path, StageConfig base = {});
std::string render_config(const StageConfig& cfg);

void to_json(nlohmann::json& j, const StageConfig& cfg);
StageConfig config_from_json(const nlohmann::json& j);

}  // namespace rsvp::train

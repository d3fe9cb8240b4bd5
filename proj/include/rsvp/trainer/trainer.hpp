#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsvp/eval/inference.hpp"
#include "rsvp/model/checkpoint.hpp"
#include "rsvp/model/classifier.hpp"
#include "rsvp/model/decoder.hpp"
#include "rsvp/model/encoder.hpp"
#include "rsvp/text/dataset.hpp"
#include "rsvp/text/vocab.hpp"
#include "rsvp/trainer/config.hpp"

namespace rsvp::train {

// Split, vocabulary and encodings shared by every seed of a run.
struct PreparedData {
  text::Vocab vocab;
  text::LabelSet labels;
  std::vector<text::EncodedExample> train;
  std::vector<text::EncodedExample> valid;
  std::vector<text::EncodedExample> test;
};

// Vocabulary comes from train-split utterances and responses unless given;
// labels from every record unless given.
PreparedData prepare_data(std::span<const text::DialogueRecord> records, const StageConfig& cfg,
                          const text::Vocab* vocab = nullptr, const text::LabelSet* labels = nullptr);

// Ordered (name, value) pairs. Single-label: accuracy, mrr3, mrr5.
// Multi-label: micro_f1, macro_f1, subset_accuracy.
using Metrics = std::vector<std::pair<std::string, double>>;
double metric(const Metrics& m, std::string_view name);
Metrics score(std::span<const eval::Prediction> preds, text::LabelMode mode);

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

// One row of a per-epoch curve. diagnostic is in-batch recall@1
// (retrieval), eval-mode per-token loss (generation) or train accuracy
// (fine-tuning); valid_metric is only set while fine-tuning.
struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;  // 1-based
  double loss = 0;
  double diagnostic = kNotApplicable;
  double valid_metric = kNotApplicable;
};

// Returning false stops the current stage after this epoch.
using EpochCallback = std::function<bool(const EpochRecord&)>;

// Named substreams of the run seed.
struct SeedStreams {
  explicit SeedStreams(std::uint64_t seed);
  num::Rng init_encoder, init_decoder, init_classifier;
  num::Rng dropout_retrieval, dropout_generation, dropout_finetune;
  num::Rng shuffle_retrieval, shuffle_generation, shuffle_finetune;
  num::Rng views;
};

template <typename T>
class Trainer {
 public:
  Trainer(StageConfig cfg, const PreparedData& data, std::uint64_t seed);

  const StageConfig& config() const { return cfg_; }
  const PreparedData& data() const { return *data_; }
  std::uint64_t seed() const { return seed_; }

  model::ConversationalEncoder<T>& encoder() { return encoder_; }
  const model::ConversationalEncoder<T>& encoder() const { return encoder_; }
  const std::optional<model::ResponseDecoder<T>>& decoder() const { return decoder_; }
  std::optional<model::ResponseDecoder<T>>& decoder() { return decoder_; }
  const std::optional<model::IntentClassifier<T>>& classifier() const { return head_; }

  std::vector<EpochRecord> pretrain_retrieval(const EpochCallback& cb = {});
  std::vector<EpochRecord> pretrain_generation(const EpochCallback& cb = {});
  // Runs the enabled pre-training stages in task_order.
  std::vector<EpochRecord> pretrain(const EpochCallback& cb = {});
  std::vector<EpochRecord> finetune(const EpochCallback& cb = {});

  // Epoch whose weights were kept by fine-tuning (0 when none ran).
  std::size_t selected_epoch() const { return selected_epoch_; }

  std::vector<eval::Prediction> predict(std::span<const text::EncodedExample> examples) const;
  Metrics evaluate(std::span<const text::EncodedExample> examples) const;
  // Accuracy (single) or subset accuracy (multi).
  double headline(std::span<const text::EncodedExample> examples) const;

  // Eval-mode per-token generation loss over the given pairs.
  double generation_token_loss(std::span<const std::size_t> train_indices) const;
  double retrieval_recall(std::span<const std::size_t> train_indices) const;

  void save_checkpoint(const std::filesystem::path& path, model::StageTag stage) const;
  // Returns warnings (e.g. stage order). Config mismatch throws.
  std::vector<std::string> load_checkpoint(const std::filesystem::path& path, model::StageTag target);

  std::vector<num::Parameter<T>*> encoder_parameters() { return encoder_.parameters(); }

 private:
  text::TokenBatch utterances(std::span<const std::size_t> idx) const;
  text::TokenBatch retrieval_responses(std::span<const std::size_t> idx) const;
  text::TokenBatch generation_responses(std::span<const std::size_t> idx) const;
  std::vector<std::size_t> response_pairs(std::size_t limit) const;

  StageConfig cfg_;
  const PreparedData* data_;
  std::uint64_t seed_;
  SeedStreams rng_;
  model::ConversationalEncoder<T> encoder_;
  std::optional<model::ResponseDecoder<T>> decoder_;
  std::optional<model::IntentClassifier<T>> head_;
  std::size_t selected_epoch_ = 0;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

// Encoder (+ classifier) restored from a checkpoint with its stamped config,
// vocabulary and labels.
template <typename T>
struct LoadedModel {
  StageConfig config;
  text::Vocab vocab;
  text::LabelSet labels;
  model::StageTag stage = model::StageTag::retrieval;
  model::ConversationalEncoder<T> encoder;
  std::optional<model::IntentClassifier<T>> classifier;
};

template <typename T>
LoadedModel<T> load_model(const model::Checkpoint& ckpt);

// Header fields every checkpoint carries.
nlohmann::json checkpoint_header(const StageConfig& cfg, const PreparedData& data,
                                 const model::EncoderConfig& enc, std::uint64_t seed);

}  // namespace rsvp::train

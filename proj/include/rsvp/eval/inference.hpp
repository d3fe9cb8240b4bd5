#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rsvp/eval/metrics.hpp"
#include "rsvp/model/classifier.hpp"
#include "rsvp/model/encoder.hpp"
#include "rsvp/text/dataset.hpp"

namespace rsvp::eval {

// Eval-mode pooled utterance embeddings, one row per example. Examples are
// packed in fixed chunks of batch_size so results are reproducible.
template <typename T>
std::vector<std::vector<T>> embed_utterances(const model::ConversationalEncoder<T>& encoder,
                                             std::span<const text::EncodedExample> examples,
                                             std::size_t batch_size = 32);

// Softmax probabilities (single) or per-class sigmoids (multi) with gold
// taken from each example. Response ids are never read.
template <typename T>
std::vector<Prediction> predict(const model::ConversationalEncoder<T>& encoder,
                                const model::IntentClassifier<T>& head,
                                std::span<const text::EncodedExample> examples,
                                text::LabelMode mode, std::size_t batch_size = 32);

struct SingleLabelScores {
  double accuracy = 0, mrr3 = 0, mrr5 = 0;
};
SingleLabelScores single_label_scores(std::span<const Prediction> preds);

// CSV: id,intent,e0..e{d-1}; values printed with 9 significant digits.
template <typename T>
void export_embeddings(const model::ConversationalEncoder<T>& encoder,
                       std::span<const text::EncodedExample> examples,
                       const std::filesystem::path& path, std::size_t batch_size = 32);

struct EmbeddingRow {
  std::string id;
  std::string intent;
  std::vector<double> values;
};
std::vector<EmbeddingRow> load_embeddings_csv(const std::filesystem::path& path);

}  // namespace rsvp::eval

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rsvp/numerics/tensor.hpp"

namespace rsvp::eval {

// Class scores for one example plus its gold label (single-label) or gold
// multi-hot set (multi-label).
struct Prediction {
  std::vector<double> scores;
  int gold = -1;
  std::vector<std::uint8_t> gold_set;
};

// Highest score, lowest index on ties.
std::size_t argmax(std::span<const double> scores);
// 1-based rank of `gold` when scores are sorted descending, ties by index.
std::size_t rank_of(std::span<const double> scores, std::size_t gold);

double accuracy(std::span<const Prediction> preds);
// Reciprocal rank counted only when the rank is at most k.
double mrr_at_k(std::span<const Prediction> preds, int k);

struct MultilabelMetrics {
  double micro_f1 = 0;
  double macro_f1 = 0;
  double subset_accuracy = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

// Predicted set is {c : score_c > threshold}. A class (or the micro pool)
// with no gold and no predicted positives scores F1 = 1.
MultilabelMetrics multilabel_metrics(std::span<const Prediction> preds, double threshold = 0.5);

// Fraction of rows whose most cosine-similar candidate is their own pair.
template <typename T>
double in_batch_recall_at_1(const num::Tensor<T>& q, const num::Tensor<T>& p);

}  // namespace rsvp::eval

#include "rsvp/eval/metrics.hpp"

#include <stdexcept>
#include <string>

#include "rsvp/error.hpp"
#include "rsvp/numerics/ops.hpp"

namespace rsvp::eval {

std::size_t argmax(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c)
    if (scores[c] > scores[best]) best = c;
  return best;
}

std::size_t rank_of(std::span<const double> scores, std::size_t gold) {
  if (gold >= scores.size())
    throw std::out_of_range("gold class " + std::to_string(gold) + " outside " +
                            std::to_string(scores.size()) + " scores");
  std::size_t rank = 1;
  for (std::size_t c = 0; c < scores.size(); ++c)
    if (scores[c] > scores[gold] || (scores[c] == scores[gold] && c < gold)) ++rank;
  return rank;
}

namespace {

std::size_t gold_of(const Prediction& p) {
  if (p.gold < 0) throw std::invalid_argument("prediction has no single-label gold class");
  return static_cast<std::size_t>(p.gold);
}

}  // namespace

double accuracy(std::span<const Prediction> preds) {
  if (preds.empty()) throw std::invalid_argument("accuracy of an empty prediction set");
  std::size_t hits = 0;
  for (const auto& p : preds) hits += argmax(p.scores) == gold_of(p);
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double mrr_at_k(std::span<const Prediction> preds, int k) {
  if (k < 1) throw std::invalid_argument("MRR cutoff k must be at least 1, got " + std::to_string(k));
  if (preds.empty()) throw std::invalid_argument("MRR of an empty prediction set");
  double total = 0;
  for (const auto& p : preds) {
    const auto r = rank_of(p.scores, gold_of(p));
    if (r <= static_cast<std::size_t>(k)) total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(preds.size());
}

MultilabelMetrics multilabel_metrics(std::span<const Prediction> preds, double threshold) {
  MultilabelMetrics m;
  if (preds.empty()) return m;
  const std::size_t C = preds.front().scores.size();
  std::vector<std::size_t> tp(C), fp(C), fn(C);
  std::size_t exact = 0;
  for (const auto& p : preds) {
    if (p.scores.size() != C || p.gold_set.size() != C)
      throw DimensionError("multi-label prediction with inconsistent class count");
    bool match = true;
    for (std::size_t c = 0; c < C; ++c) {
      const bool pred = p.scores[c] > threshold;
      const bool gold = p.gold_set[c] != 0;
      tp[c] += pred && gold;
      fp[c] += pred && !gold;
      fn[c] += !pred && gold;
      match = match && pred == gold;
    }
    exact += match;
  }
  auto f1 = [](std::size_t t, std::size_t f_pos, std::size_t f_neg) {
    const std::size_t denom = 2 * t + f_pos + f_neg;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(t) / static_cast<double>(denom);
  };
  double macro = 0;
  for (std::size_t c = 0; c < C; ++c) {
    m.tp += tp[c];
    m.fp += fp[c];
    m.fn += fn[c];
    macro += f1(tp[c], fp[c], fn[c]);
  }
  m.micro_f1 = f1(m.tp, m.fp, m.fn);
  m.macro_f1 = C ? macro / static_cast<double>(C) : 0.0;
  m.subset_accuracy = static_cast<double>(exact) / static_cast<double>(preds.size());
  return m;
}

template <typename T>
double in_batch_recall_at_1(const num::Tensor<T>& q, const num::Tensor<T>& p) {
  num::NoGradGuard guard;
  const auto s = num::cosine_matrix(q.detach(), p.detach());
  const std::size_t n = s.dim(0), m = s.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (s.data()[i * m + j] > s.data()[i * m + best]) best = j;
    hits += best == i;
  }
  return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
}

template double in_batch_recall_at_1(const num::Tensor<float>&, const num::Tensor<float>&);
template double in_batch_recall_at_1(const num::Tensor<double>&, const num::Tensor<double>&);

}  // namespace rsvp::eval

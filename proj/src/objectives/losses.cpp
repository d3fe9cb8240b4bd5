#include "rsvp/objectives/losses.hpp"

#include <stdexcept>
#include <string>

#include "rsvp/error.hpp"
#include "rsvp/numerics/ops.hpp"

namespace rsvp::obj {

void LossWeights::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be nonnegative");
}

template <typename T>
num::Tensor<T> contrastive_loss(const num::Tensor<T>& anchors, const num::Tensor<T>& candidates,
                                double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature tau must be positive, got " + std::to_string(tau));
  if (anchors.rank() != 2 || candidates.rank() != 2 || anchors.shape() != candidates.shape())
    throw DimensionError("contrastive batch needs matching n x d anchors and candidates, got " +
                         num::shape_str(anchors.shape()) + " and " +
                         num::shape_str(candidates.shape()));
  const std::size_t n = anchors.dim(0);
  auto logits = num::scale(num::cosine_matrix(anchors, candidates), static_cast<T>(1.0 / tau));
  std::vector<int> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = static_cast<int>(i);
  auto lp = num::pick(num::log_softmax(logits, 1), std::span<const int>(diag));
  return num::scale(num::mean(lp), T(-1));
}

GenReduction parse_gen_reduction(std::string_view name) {
  if (name == "token_mean") return GenReduction::token_mean;
  if (name == "sequence_sum") return GenReduction::sequence_sum;
  throw std::invalid_argument("unknown generation loss reduction '" + std::string(name) + "'");
}

std::string_view to_string(GenReduction r) {
  return r == GenReduction::token_mean ? "token_mean" : "sequence_sum";
}

std::vector<int> shifted_targets(const text::TokenBatch& responses, int pad_id) {
  std::vector<int> out(responses.batch * responses.length, pad_id);
  for (std::size_t b = 0; b < responses.batch; ++b)
    for (std::size_t t = 0; t + 1 < responses.length; ++t) {
      const std::size_t next = b * responses.length + t + 1;
      if (responses.valid[next]) out[b * responses.length + t] = responses.ids[next];
    }
  return out;
}

template <typename T>
num::Tensor<T> generation_loss(const num::Tensor<T>& logits, std::span<const int> targets,
                               GenReduction reduction, std::size_t sequences, int pad_id) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw DimensionError("generation loss needs one target per logits row, got logits " +
                         num::shape_str(logits.shape()) + " and " + std::to_string(targets.size()) +
                         " targets");
  const std::size_t V = logits.dim(1);
  std::vector<std::size_t> rows;
  std::vector<int> ids;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == pad_id) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= V)
      throw std::out_of_range("target id " + std::to_string(targets[t]) + " outside vocabulary of size " +
                              std::to_string(V));
    rows.push_back(t);
    ids.push_back(targets[t]);
  }
  if (rows.empty()) throw std::invalid_argument("generation loss has no non-PAD targets");
  auto lp = num::pick(num::log_softmax(num::select_rows(logits, std::span<const std::size_t>(rows)), 1),
                      std::span<const int>(ids));
  if (reduction == GenReduction::token_mean) return num::scale(num::mean(lp), T(-1));
  if (sequences == 0) throw std::invalid_argument("sequence_sum reduction needs sequences >= 1");
  return num::scale(num::sum(lp), static_cast<T>(-1.0 / static_cast<double>(sequences)));
}

namespace {

void check_labels(std::size_t n, std::size_t classes, std::span<const int> labels) {
  if (labels.size() != n)
    throw DimensionError("expected " + std::to_string(n) + " labels, got " + std::to_string(labels.size()));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

}  // namespace

template <typename T>
num::Tensor<T> classification_loss(const num::Tensor<T>& probs, std::span<const int> labels) {
  if (probs.rank() != 2) throw DimensionError("classification loss needs an n x |C| matrix");
  check_labels(probs.dim(0), probs.dim(1), labels);
  return num::scale(num::mean(num::log(num::pick(probs, labels))), T(-1));
}

template <typename T>
num::Tensor<T> classification_loss_from_logits(const num::Tensor<T>& logits,
                                               std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("classification loss needs an n x |C| matrix");
  check_labels(logits.dim(0), logits.dim(1), labels);
  return num::scale(num::mean(num::pick(num::log_softmax(logits, 1), labels)), T(-1));
}

template <typename T>
num::Tensor<T> combined_finetune_loss(const num::Tensor<T>& ce, const num::Tensor<T>& uns,
                                      const LossWeights& w) {
  w.validate();
  if (w.lambda == 0.0) return ce;
  return num::add(ce, num::scale(uns, static_cast<T>(w.lambda)));
}

double combined_finetune_loss(double ce, double uns, const LossWeights& w) {
  w.validate();
  return ce + w.lambda * uns;
}

template <typename T>
num::Tensor<T> multilabel_loss(const num::Tensor<T>& logits, std::span<const std::uint8_t> multi_hot) {
  if (logits.size() != multi_hot.size())
    throw DimensionError("multi-hot targets (" + std::to_string(multi_hot.size()) +
                         ") do not match logits " + num::shape_str(logits.shape()));
  std::vector<T> y(multi_hot.begin(), multi_hot.end());
  num::Tensor<T> targets(logits.shape(), std::move(y));
  return num::mean(num::sub(num::softplus(logits), num::mul(targets, logits)));
}

#define RSVP_INSTANTIATE(T)                                                                        \
  template num::Tensor<T> contrastive_loss(const num::Tensor<T>&, const num::Tensor<T>&, double);  \
  template num::Tensor<T> generation_loss(const num::Tensor<T>&, std::span<const int>,            \
                                          GenReduction, std::size_t, int);                         \
  template num::Tensor<T> classification_loss(const num::Tensor<T>&, std::span<const int>);      \
  template num::Tensor<T> classification_loss_from_logits(const num::Tensor<T>&,                  \
                                                          std::span<const int>);                   \
  template num::Tensor<T> combined_finetune_loss(const num::Tensor<T>&, const num::Tensor<T>&,    \
                                                 const LossWeights&);                              \
  template num::Tensor<T> multilabel_loss(const num::Tensor<T>&, std::span<const std::uint8_t>);

RSVP_INSTANTIATE(float)
RSVP_INSTANTIATE(double)

}  // namespace rsvp::obj

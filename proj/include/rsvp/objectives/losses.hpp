#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "rsvp/numerics/tensor.hpp"
#include "rsvp/text/batch.hpp"

namespace rsvp::obj {

struct LossWeights {
  double lambda = 0.5;
  void validate() const;
};

// In-batch contrastive loss with cosine similarity over temperature tau.
// Row i of `candidates` is the positive for row i of `anchors`; the other
// rows are its negatives. Both retrieval_loss and unsup_contrastive_loss
// forward here.
template <typename T>
num::Tensor<T> contrastive_loss(const num::Tensor<T>& anchors, const num::Tensor<T>& candidates,
                                double tau);

template <typename T>
num::Tensor<T> retrieval_loss(const num::Tensor<T>& q, const num::Tensor<T>& p, double tau) {
  return contrastive_loss(q, p, tau);
}

template <typename T>
num::Tensor<T> unsup_contrastive_loss(const num::Tensor<T>& q_hat, const num::Tensor<T>& q_bar,
                                      double tau) {
  return contrastive_loss(q_hat, q_bar, tau);
}

enum class GenReduction { token_mean, sequence_sum };
GenReduction parse_gen_reduction(std::string_view name);
std::string_view to_string(GenReduction r);

// Next-token targets for a teacher-forced batch: targets[b*L + t] is the id
// at t+1 of row b, or pad_id past its end.
std::vector<int> shifted_targets(const text::TokenBatch& responses, int pad_id = 0);

// Cross-entropy of logits rows against targets, skipping pad_id. token_mean
// averages over scored tokens; sequence_sum sums and divides by `sequences`.
template <typename T>
num::Tensor<T> generation_loss(const num::Tensor<T>& logits, std::span<const int> targets,
                               GenReduction reduction = GenReduction::token_mean,
                               std::size_t sequences = 1, int pad_id = 0);

// -(1/n) sum log rho[i, y_i] over probability rows.
template <typename T>
num::Tensor<T> classification_loss(const num::Tensor<T>& probs, std::span<const int> labels);

// Same quantity computed from logits through log-softmax.
template <typename T>
num::Tensor<T> classification_loss_from_logits(const num::Tensor<T>& logits,
                                               std::span<const int> labels);

// ce + lambda * uns; returns `ce` itself when lambda is 0.
template <typename T>
num::Tensor<T> combined_finetune_loss(const num::Tensor<T>& ce, const num::Tensor<T>& uns,
                                      const LossWeights& w);
double combined_finetune_loss(double ce, double uns, const LossWeights& w);

// Mean element-wise sigmoid BCE; multi_hot is n*|C| row-major flags.
template <typename T>
num::Tensor<T> multilabel_loss(const num::Tensor<T>& logits, std::span<const std::uint8_t> multi_hot);

}  // namespace rsvp::obj

#pragma once

#include <span>
#include <vector>

#include "rsvp/model/encoder.hpp"

namespace rsvp::model {

template <typename T>
struct DecoderBlock {
  MultiHeadAttention<T> self_attention;
  LayerNorm<T> self_attention_norm;
  MultiHeadAttention<T> cross_attention;
  LayerNorm<T> cross_attention_norm;
  FeedForward<T> ffn;
  LayerNorm<T> ffn_norm;

  num::Tensor<T> operator()(const num::Tensor<T>& x, const num::Tensor<T>& memory,
                            const num::AttentionSpec& self_spec,
                            const num::AttentionSpec& cross_spec, ForwardContext& ctx) const;

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    MultiHeadAttention<T>::visit(self.self_attention, f);
    LayerNorm<T>::visit(self.self_attention_norm, f);
    MultiHeadAttention<T>::visit(self.cross_attention, f);
    LayerNorm<T>::visit(self.cross_attention_norm, f);
    FeedForward<T>::visit(self.ffn, f);
    LayerNorm<T>::visit(self.ffn_norm, f);
  }
};

// Causal decoder whose embeddings, self-attention and FFN start as copies of
// an encoder's. Cross-attention and the LM head are freshly initialized.
template <typename T>
class ResponseDecoder {
 public:
  ResponseDecoder() = default;

  static ResponseDecoder from_encoder(const ConversationalEncoder<T>& encoder, num::Rng& init_rng);

  const EncoderConfig& config() const { return config_; }

  // Logits (batch*length) x vocab; row t of each sequence predicts token t+1.
  // Every response row must start with [BOS].
  num::Tensor<T> forward_teacher_forced(const EncoderOutput<T>& memory,
                                        const text::TokenBatch& responses,
                                        ForwardContext& ctx) const;
  num::Tensor<T> forward_teacher_forced(const EncoderOutput<T>& memory,
                                        const text::TokenBatch& responses) const {
    ForwardContext ctx;
    return forward_teacher_forced(memory, responses, ctx);
  }

  // Greedy decoding from [BOS]; the result excludes [BOS] and [EOS].
  std::vector<int> generate(const ConversationalEncoder<T>& encoder, std::span<const int> u_ids,
                            std::size_t max_T) const;

  std::vector<num::Parameter<T>*> parameters();
  std::vector<const num::Parameter<T>*> parameters() const;

  const std::vector<DecoderBlock<T>>& blocks() const { return blocks_; }
  std::vector<DecoderBlock<T>>& mutable_blocks() { return blocks_; }
  const num::Parameter<T>& token_embedding() const { return token_embedding_; }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f(self.token_embedding_);
    f(self.position_embedding_);
    LayerNorm<T>::visit(self.embedding_norm_, f);
    for (auto& b : self.blocks_) DecoderBlock<T>::visit(b, f);
    if (self.config_.tie_lm_head) {
      f(self.lm_head_.bias);
    } else {
      Linear<T>::visit(self.lm_head_, f);
    }
  }

 private:
  EncoderConfig config_;
  num::Parameter<T> token_embedding_;
  num::Parameter<T> position_embedding_;
  LayerNorm<T> embedding_norm_;
  std::vector<DecoderBlock<T>> blocks_;
  Linear<T> lm_head_;
};

}  // namespace rsvp::model

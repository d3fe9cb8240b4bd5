#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rsvp/model/layers.hpp"
#include "rsvp/text/batch.hpp"

namespace rsvp::model {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  double dropout_p = 0.1;
  std::size_t max_positions = 512;
  std::size_t pooled_dim = 128;
  bool tie_lm_head = false;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

template <typename T>
struct EncoderOutput {
  num::Tensor<T> hidden;  // (batch*length) x d_model
  num::Tensor<T> pooled;  // batch x pooled_dim
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> valid;
};

template <typename T>
struct EncoderBlock {
  MultiHeadAttention<T> attention;
  LayerNorm<T> attention_norm;
  FeedForward<T> ffn;
  LayerNorm<T> ffn_norm;

  EncoderBlock() = default;
  EncoderBlock(const std::string& name, const EncoderConfig& c, num::Rng& rng);

  num::Tensor<T> operator()(const num::Tensor<T>& x, const num::AttentionSpec& spec,
                            ForwardContext& ctx) const;

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    MultiHeadAttention<T>::visit(self.attention, f);
    LayerNorm<T>::visit(self.attention_norm, f);
    FeedForward<T>::visit(self.ffn, f);
    LayerNorm<T>::visit(self.ffn_norm, f);
  }
};

// Shared utterance/response encoder: post-LN transformer with learned
// positions and a tanh pooling head on position 0.
template <typename T>
class ConversationalEncoder {
 public:
  ConversationalEncoder() = default;
  ConversationalEncoder(const EncoderConfig& config, num::Rng& init_rng);

  const EncoderConfig& config() const { return config_; }

  EncoderOutput<T> forward(const text::TokenBatch& batch, ForwardContext& ctx) const;
  EncoderOutput<T> forward(const text::TokenBatch& batch) const {
    ForwardContext ctx;
    return forward(batch, ctx);
  }

  // Eval-mode pooled embedding of one [CLS]-led sequence.
  std::vector<T> encode(std::span<const int> ids) const;
  std::pair<std::vector<T>, std::vector<T>> encode_pair(std::span<const int> u_ids,
                                                        std::span<const int> r_ids) const;

  std::vector<num::Parameter<T>*> parameters();
  std::vector<const num::Parameter<T>*> parameters() const;

  const num::Parameter<T>& token_embedding() const { return token_embedding_; }
  const num::Parameter<T>& position_embedding() const { return position_embedding_; }
  const LayerNorm<T>& embedding_norm() const { return embedding_norm_; }
  const std::vector<EncoderBlock<T>>& blocks() const { return blocks_; }
  const Linear<T>& pooler() const { return pooler_; }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f(self.token_embedding_);
    f(self.position_embedding_);
    LayerNorm<T>::visit(self.embedding_norm_, f);
    for (auto& b : self.blocks_) EncoderBlock<T>::visit(b, f);
    Linear<T>::visit(self.pooler_, f);
  }

 private:
  EncoderConfig config_;
  num::Parameter<T> token_embedding_;
  num::Parameter<T> position_embedding_;
  LayerNorm<T> embedding_norm_;
  std::vector<EncoderBlock<T>> blocks_;
  Linear<T> pooler_;
};

// Token + position embedding, normalized and dropped out. Shared by the
// encoder and the decoder. Throws when batch.length exceeds the table.
template <typename T>
num::Tensor<T> embed_tokens(const num::Parameter<T>& tokens, const num::Parameter<T>& positions,
                            const LayerNorm<T>& norm, const text::TokenBatch& batch,
                            ForwardContext& ctx);

// Collects pointers to every parameter reached by Module::visit.
template <typename T, typename Module>
std::vector<num::Parameter<T>*> collect_parameters(Module& m) {
  std::vector<num::Parameter<T>*> out;
  Module::visit(m, [&](num::Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T, typename Module>
std::vector<const num::Parameter<T>*> collect_parameters(const Module& m) {
  std::vector<const num::Parameter<T>*> out;
  Module::visit(m, [&](const num::Parameter<T>& p) { out.push_back(&p); });
  return out;
}

}  // namespace rsvp::model

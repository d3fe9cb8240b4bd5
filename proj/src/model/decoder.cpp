#include "rsvp/model/decoder.hpp"

#include <stdexcept>

#include "rsvp/text/vocab.hpp"

namespace rsvp::model {

namespace {

template <typename T, typename Module>
void rename_all(Module& m, const std::string& from, const std::string& to) {
  Module::visit(m, [&](num::Parameter<T>& p) {
    rename_prefix(p, from, to);
    p.reset_optimizer_state();
  });
}

template <typename T>
num::Parameter<T> copy_as(const num::Parameter<T>& src, const std::string& name) {
  num::Parameter<T> p = src;
  p.set_name(name);
  p.reset_optimizer_state();
  return p;
}

}  // namespace

template <typename T>
num::Tensor<T> DecoderBlock<T>::operator()(const num::Tensor<T>& x, const num::Tensor<T>& memory,
                                           const num::AttentionSpec& self_spec,
                                           const num::AttentionSpec& cross_spec,
                                           ForwardContext& ctx) const {
  auto h = self_attention_norm(num::add(x, apply_dropout(self_attention(x, x, self_spec), ctx)));
  h = cross_attention_norm(
      num::add(h, apply_dropout(cross_attention(h, memory, cross_spec), ctx)));
  return ffn_norm(num::add(h, apply_dropout(ffn(h), ctx)));
}

template <typename T>
ResponseDecoder<T> ResponseDecoder<T>::from_encoder(const ConversationalEncoder<T>& encoder,
                                                    num::Rng& rng) {
  ResponseDecoder d;
  d.config_ = encoder.config();
  d.token_embedding_ = copy_as(encoder.token_embedding(), "decoder.token_embedding");
  d.position_embedding_ = copy_as(encoder.position_embedding(), "decoder.position_embedding");
  d.embedding_norm_ = encoder.embedding_norm();
  rename_all<T>(d.embedding_norm_, "encoder.", "decoder.");

  const std::size_t width = d.config_.d_model;
  for (std::size_t l = 0; l < encoder.blocks().size(); ++l) {
    const auto& src = encoder.blocks()[l];
    const std::string enc = "encoder.block" + std::to_string(l);
    const std::string dec = "decoder.block" + std::to_string(l);
    DecoderBlock<T> b;
    b.self_attention = src.attention;
    rename_all<T>(b.self_attention, enc + ".attention", dec + ".self_attention");
    b.self_attention_norm = src.attention_norm;
    rename_all<T>(b.self_attention_norm, enc + ".attention_norm", dec + ".self_attention_norm");
    b.cross_attention =
        MultiHeadAttention<T>(dec + ".cross_attention", width, d.config_.n_heads, rng);
    b.cross_attention_norm = LayerNorm<T>(dec + ".cross_attention_norm", width);
    b.ffn = src.ffn;
    rename_all<T>(b.ffn, enc + ".ffn", dec + ".ffn");
    b.ffn_norm = src.ffn_norm;
    rename_all<T>(b.ffn_norm, enc + ".ffn_norm", dec + ".ffn_norm");
    d.blocks_.push_back(std::move(b));
  }
  if (d.config_.tie_lm_head) {
    d.lm_head_.bias = num::Parameter<T>::zeros("decoder.lm_head.bias", {d.config_.vocab_size});
  } else {
    d.lm_head_ = Linear<T>("decoder.lm_head", width, d.config_.vocab_size, rng);
  }
  return d;
}

template <typename T>
num::Tensor<T> ResponseDecoder<T>::forward_teacher_forced(const EncoderOutput<T>& memory,
                                                          const text::TokenBatch& responses,
                                                          ForwardContext& ctx) const {
  if (responses.batch != memory.batch)
    throw std::invalid_argument("decoder batch (" + std::to_string(responses.batch) +
                                ") does not match encoder batch (" +
                                std::to_string(memory.batch) + ")");
  for (std::size_t b = 0; b < responses.batch; ++b)
    if (responses.ids[b * responses.length] != text::Vocab::kBos)
      throw std::invalid_argument("response " + std::to_string(b) + " does not start with [BOS]");

  auto x = embed_tokens(token_embedding_, position_embedding_, embedding_norm_, responses, ctx);

  num::AttentionSpec self_spec;
  self_spec.batch = responses.batch;
  self_spec.query_len = responses.length;
  self_spec.key_len = responses.length;
  self_spec.key_valid = responses.valid;
  self_spec.causal = true;

  num::AttentionSpec cross_spec;
  cross_spec.batch = memory.batch;
  cross_spec.query_len = responses.length;
  cross_spec.key_len = memory.length;
  cross_spec.key_valid = memory.valid;

  for (const auto& block : blocks_) x = block(x, memory.hidden, self_spec, cross_spec, ctx);

  if (config_.tie_lm_head)
    return num::add_bias(num::matmul(x, num::transpose(token_embedding_.tensor())),
                         lm_head_.bias.tensor());
  return lm_head_(x);
}

template <typename T>
std::vector<int> ResponseDecoder<T>::generate(const ConversationalEncoder<T>& encoder,
                                              std::span<const int> u_ids, std::size_t max_T) const {
  std::vector<int> out;
  if (max_T == 0) return out;
  num::NoGradGuard guard;
  const auto memory = encoder.forward(text::TokenBatch::single(u_ids));
  std::vector<int> seq{text::Vocab::kBos};
  const std::size_t V = config_.vocab_size;
  while (out.size() < max_T && seq.size() <= config_.max_positions) {
    const auto logits = forward_teacher_forced(memory, text::TokenBatch::single(seq));
    auto row = logits.data().subspan((seq.size() - 1) * V, V);
    std::size_t best = 0;
    for (std::size_t v = 1; v < V; ++v)
      if (row[v] > row[best]) best = v;
    if (static_cast<int>(best) == text::Vocab::kEos) break;
    out.push_back(static_cast<int>(best));
    seq.push_back(static_cast<int>(best));
  }
  return out;
}

template <typename T>
std::vector<num::Parameter<T>*> ResponseDecoder<T>::parameters() {
  return collect_parameters<T>(*this);
}

template <typename T>
std::vector<const num::Parameter<T>*> ResponseDecoder<T>::parameters() const {
  return collect_parameters<T>(*this);
}

template struct DecoderBlock<float>;
template struct DecoderBlock<double>;
template class ResponseDecoder<float>;
template class ResponseDecoder<double>;

}  // namespace rsvp::model

#include "rsvp/model/encoder.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rsvp/error.hpp"
#include "rsvp/text/vocab.hpp"

namespace rsvp::model {

void EncoderConfig::validate() const {
  if (vocab_size <= text::Vocab::kReservedCount)
    throw std::invalid_argument("vocab_size must exceed the reserved token count");
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ffn == 0 || pooled_dim == 0 ||
      max_positions == 0)
    throw std::invalid_argument("encoder dimensions must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("d_model (" + std::to_string(d_model) +
                                ") is not divisible by n_heads (" + std::to_string(n_heads) + ")");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw std::invalid_argument("dropout_p must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                     {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                     {"d_ffn", c.d_ffn},           {"dropout_p", c.dropout_p},
                     {"max_positions", c.max_positions}, {"pooled_dim", c.pooled_dim},
                     {"tie_lm_head", c.tie_lm_head}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("d_model").get_to(c.d_model);
  j.at("n_layers").get_to(c.n_layers);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_ffn").get_to(c.d_ffn);
  j.at("dropout_p").get_to(c.dropout_p);
  j.at("max_positions").get_to(c.max_positions);
  j.at("pooled_dim").get_to(c.pooled_dim);
  c.tie_lm_head = j.value("tie_lm_head", false);
}

template <typename T>
EncoderBlock<T>::EncoderBlock(const std::string& name, const EncoderConfig& c, num::Rng& rng)
    : attention(name + ".attention", c.d_model, c.n_heads, rng),
      attention_norm(name + ".attention_norm", c.d_model),
      ffn(name + ".ffn", c.d_model, c.d_ffn, rng),
      ffn_norm(name + ".ffn_norm", c.d_model) {}

template <typename T>
num::Tensor<T> EncoderBlock<T>::operator()(const num::Tensor<T>& x, const num::AttentionSpec& spec,
                                           ForwardContext& ctx) const {
  auto h = attention_norm(num::add(x, apply_dropout(attention(x, x, spec), ctx)));
  return ffn_norm(num::add(h, apply_dropout(ffn(h), ctx)));
}

template <typename T>
num::Tensor<T> embed_tokens(const num::Parameter<T>& tokens, const num::Parameter<T>& positions,
                            const LayerNorm<T>& norm, const text::TokenBatch& batch,
                            ForwardContext& ctx) {
  const std::size_t max_pos = positions.shape()[0];
  if (batch.length > max_pos)
    throw DimensionError("sequence of length " + std::to_string(batch.length) +
                         " exceeds max_positions " + std::to_string(max_pos));
  std::vector<int> pos(batch.batch * batch.length);
  for (std::size_t b = 0; b < batch.batch; ++b)
    for (std::size_t j = 0; j < batch.length; ++j) pos[b * batch.length + j] = static_cast<int>(j);
  auto x = num::add(num::embedding(tokens.tensor(), std::span<const int>(batch.ids)),
                    num::embedding(positions.tensor(), std::span<const int>(pos)));
  return apply_dropout(norm(x), ctx);
}

template <typename T>
ConversationalEncoder<T>::ConversationalEncoder(const EncoderConfig& config, num::Rng& rng)
    : config_(config) {
  config_.validate();
  token_embedding_ = num::Parameter<T>::normal("encoder.token_embedding",
                                               {config_.vocab_size, config_.d_model}, kInitStddev, rng);
  position_embedding_ = num::Parameter<T>::normal(
      "encoder.position_embedding", {config_.max_positions, config_.d_model}, kInitStddev, rng);
  embedding_norm_ = LayerNorm<T>("encoder.embedding_norm", config_.d_model);
  for (std::size_t l = 0; l < config_.n_layers; ++l)
    blocks_.emplace_back("encoder.block" + std::to_string(l), config_, rng);
  pooler_ = Linear<T>("encoder.pooler", config_.d_model, config_.pooled_dim, rng);
}

template <typename T>
EncoderOutput<T> ConversationalEncoder<T>::forward(const text::TokenBatch& batch,
                                                   ForwardContext& ctx) const {
  EncoderOutput<T> out;
  out.batch = batch.batch;
  out.length = batch.length;
  out.valid = batch.valid;

  auto x = embed_tokens(token_embedding_, position_embedding_, embedding_norm_, batch, ctx);
  num::AttentionSpec spec;
  spec.batch = batch.batch;
  spec.query_len = batch.length;
  spec.key_len = batch.length;
  spec.key_valid = out.valid;
  for (const auto& block : blocks_) x = block(x, spec, ctx);
  out.hidden = x;

  std::vector<std::size_t> first(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) first[b] = b * batch.length;
  out.pooled = num::tanh(pooler_(num::select_rows(x, std::span<const std::size_t>(first))));
  return out;
}

template <typename T>
std::vector<T> ConversationalEncoder<T>::encode(std::span<const int> ids) const {
  if (ids.empty()) throw std::invalid_argument("encode: empty id sequence");
  if (ids[0] != text::Vocab::kCls) throw std::invalid_argument("encode: sequence must start with [CLS]");
  num::NoGradGuard guard;
  auto out = forward(text::TokenBatch::single(ids));
  auto d = out.pooled.data();
  return {d.begin(), d.end()};
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> ConversationalEncoder<T>::encode_pair(
    std::span<const int> u_ids, std::span<const int> r_ids) const {
  return {encode(u_ids), encode(r_ids)};
}

template <typename T>
std::vector<num::Parameter<T>*> ConversationalEncoder<T>::parameters() {
  return collect_parameters<T>(*this);
}

template <typename T>
std::vector<const num::Parameter<T>*> ConversationalEncoder<T>::parameters() const {
  return collect_parameters<T>(*this);
}

#define RSVP_INSTANTIATE(T)                                                                     \
  template struct EncoderBlock<T>;                                                             \
  template class ConversationalEncoder<T>;                                                     \
  template num::Tensor<T> embed_tokens(const num::Parameter<T>&, const num::Parameter<T>&,     \
                                       const LayerNorm<T>&, const text::TokenBatch&,           \
                                       ForwardContext&);

RSVP_INSTANTIATE(float)
RSVP_INSTANTIATE(double)

}  // namespace rsvp::model

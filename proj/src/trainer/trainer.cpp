#include "rsvp/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rsvp/error.hpp"
#include "rsvp/eval/metrics.hpp"
#include "rsvp/log.hpp"
#include "rsvp/numerics/ops.hpp"
#include "rsvp/objectives/losses.hpp"

namespace rsvp::train {

using text::Vocab;

PreparedData prepare_data(std::span<const text::DialogueRecord> records, const StageConfig& cfg,
                          const text::Vocab* vocab, const text::LabelSet* labels) {
  cfg.validate();
  const auto parts = text::split(records, cfg.split_ratios(), cfg.seed);
  PreparedData d;
  if (vocab) {
    d.vocab = *vocab;
  } else {
    std::vector<std::string> corpus;
    for (const auto& r : parts.train) {
      const auto flat = text::flatten_dialogue(r);
      corpus.push_back(flat.utterance);
      corpus.push_back(flat.response);
    }
    d.vocab = text::Vocab::build(corpus, cfg.min_freq, cfg.tokenizer);
  }
  d.labels = labels ? *labels : text::LabelSet::from_records(records);
  const auto opts = cfg.encode_options();
  d.train = text::encode_all(parts.train, d.vocab, d.labels, opts);
  d.valid = text::encode_all(parts.valid, d.vocab, d.labels, opts);
  d.test = text::encode_all(parts.test, d.vocab, d.labels, opts);
  return d;
}

double metric(const Metrics& m, std::string_view name) {
  for (const auto& [k, v] : m)
    if (k == name) return v;
  throw std::out_of_range("no metric named '" + std::string(name) + "'");
}

Metrics score(std::span<const eval::Prediction> preds, text::LabelMode mode) {
  if (preds.empty()) return {};
  if (mode == text::LabelMode::single) {
    const auto s = eval::single_label_scores(preds);
    return {{"accuracy", s.accuracy}, {"mrr3", s.mrr3}, {"mrr5", s.mrr5}};
  }
  const auto m = eval::multilabel_metrics(preds);
  return {{"micro_f1", m.micro_f1}, {"macro_f1", m.macro_f1}, {"subset_accuracy", m.subset_accuracy}};
}

SeedStreams::SeedStreams(std::uint64_t seed) {
  const num::Rng root(seed);
  init_encoder = root.substream("init.encoder");
  init_decoder = root.substream("init.decoder");
  init_classifier = root.substream("init.classifier");
  dropout_retrieval = root.substream("dropout.retrieval");
  dropout_generation = root.substream("dropout.generation");
  dropout_finetune = root.substream("dropout.finetune");
  shuffle_retrieval = root.substream("shuffle.retrieval");
  shuffle_generation = root.substream("shuffle.generation");
  shuffle_finetune = root.substream("shuffle.finetune");
  views = root.substream("views");
}

nlohmann::json checkpoint_header(const StageConfig& cfg, const PreparedData& data,
                                 const model::EncoderConfig& enc, std::uint64_t seed) {
  nlohmann::json h;
  h["config"] = cfg;
  h["model"] = enc;
  h["run_seed"] = seed;
  h["vocab"] = data.vocab.tokens();
  h["labels"] = data.labels.names();
  return h;
}

namespace {

template <typename T>
void check_finite(const num::Tensor<T>& loss, std::string_view stage, std::size_t epoch) {
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw NumericError("non-finite loss in " + std::string(stage) + " epoch " + std::to_string(epoch));
}

template <typename T>
void optimizer_step(std::vector<num::Parameter<T>*>& params, const num::Tensor<T>& loss,
                    const num::AdamWOptions& opts) {
  num::zero_grad<T>(params);
  num::backward(loss);
  num::adamw_step<T>(params, opts);
}

template <typename T>
void reset_state(std::vector<num::Parameter<T>*>& params) {
  for (auto* p : params) p->reset_optimizer_state();
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t n,
                                                   num::Rng& shuffle) {
  shuffle.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < order.size(); s += n)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + n)));
  return out;
}

std::vector<std::vector<std::size_t>> fixed_chunks(std::span<const std::size_t> idx, std::size_t n) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < idx.size(); s += n)
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + n)));
  return out;
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(StageConfig cfg, const PreparedData& data, std::uint64_t seed)
    : cfg_(std::move(cfg)), data_(&data), seed_(seed), rng_(seed) {
  cfg_.validate();
  encoder_ = model::ConversationalEncoder<T>(cfg_.encoder_config(data.vocab.size()), rng_.init_encoder);
}

template <typename T>
text::TokenBatch Trainer<T>::utterances(std::span<const std::size_t> idx) const {
  std::vector<std::span<const int>> seqs;
  for (auto i : idx) seqs.emplace_back(data_->train[i].utterance_ids);
  return text::TokenBatch::pack(seqs, Vocab::kPad);
}

template <typename T>
text::TokenBatch Trainer<T>::retrieval_responses(std::span<const std::size_t> idx) const {
  // The encoder sees responses framed like utterances: [CLS] + body.
  std::vector<std::vector<int>> owned;
  for (auto i : idx) {
    const auto& r = data_->train[i].response_ids();
    std::vector<int> v{Vocab::kCls};
    v.insert(v.end(), r.begin() + 1, r.end() - (r.back() == Vocab::kEos ? 1 : 0));
    owned.push_back(std::move(v));
  }
  std::vector<std::span<const int>> seqs(owned.begin(), owned.end());
  return text::TokenBatch::pack(seqs, Vocab::kPad);
}

template <typename T>
text::TokenBatch Trainer<T>::generation_responses(std::span<const std::size_t> idx) const {
  std::vector<std::span<const int>> seqs;
  for (auto i : idx) seqs.emplace_back(data_->train[i].response_ids());
  return text::TokenBatch::pack(seqs, Vocab::kPad);
}

template <typename T>
std::vector<std::size_t> Trainer<T>::response_pairs(std::size_t limit) const {
  std::vector<std::size_t> out;
  std::size_t excluded = 0;
  for (std::size_t i = 0; i < data_->train.size(); ++i) {
    const auto& ex = data_->train[i];
    // [BOS] + at least one body token.
    if (ex.has_response() && ex.response_ids().size() >= 2 && ex.response_ids()[1] != Vocab::kEos) {
      if (limit == 0 || out.size() < limit) out.push_back(i);
    } else {
      ++excluded;
    }
  }
  if (excluded) logger().info("{} training pairs with empty responses excluded from pre-training", excluded);
  return out;
}

template <typename T>
double Trainer<T>::retrieval_recall(std::span<const std::size_t> idx) const {
  num::NoGradGuard guard;
  double hits = 0;
  std::size_t rows = 0;
  for (const auto& chunk : fixed_chunks(idx, cfg_.pretrain_batch)) {
    const auto q = encoder_.forward(utterances(chunk)).pooled;
    const auto p = encoder_.forward(retrieval_responses(chunk)).pooled;
    hits += eval::in_batch_recall_at_1(q, p) * static_cast<double>(chunk.size());
    rows += chunk.size();
  }
  return rows ? hits / static_cast<double>(rows) : kNotApplicable;
}

template <typename T>
double Trainer<T>::generation_token_loss(std::span<const std::size_t> idx) const {
  if (!decoder_) throw std::logic_error("generation_token_loss needs a decoder");
  num::NoGradGuard guard;
  double total = 0;
  std::size_t tokens = 0;
  for (const auto& chunk : fixed_chunks(idx, cfg_.pretrain_batch)) {
    const auto resp = generation_responses(chunk);
    const auto targets = obj::shifted_targets(resp, Vocab::kPad);
    const auto logits = decoder_->forward_teacher_forced(encoder_.forward(utterances(chunk)), resp);
    const std::size_t n = static_cast<std::size_t>(std::count_if(
        targets.begin(), targets.end(), [](int t) { return t != Vocab::kPad; }));
    total += static_cast<double>(obj::generation_loss(logits, targets).item()) * static_cast<double>(n);
    tokens += n;
  }
  return tokens ? total / static_cast<double>(tokens) : kNotApplicable;
}

template <typename T>
std::vector<EpochRecord> Trainer<T>::pretrain_retrieval(const EpochCallback& cb) {
  std::vector<EpochRecord> curve;
  const auto pairs = response_pairs(0);
  if (pairs.size() < 2) {
    logger().warn("retrieval pre-training skipped: {} usable pairs", pairs.size());
    return curve;
  }
  auto params = encoder_.parameters();
  reset_state(params);
  const auto opts = cfg_.adamw();
  for (std::size_t epoch = 1; epoch <= cfg_.retrieval_epochs; ++epoch) {
    auto batches = make_batches(pairs, cfg_.pretrain_batch, rng_.shuffle_retrieval);
    if (batches.back().size() < 2) {
      logger().debug("retrieval epoch {}: dropping a trailing 1-pair batch", epoch);
      batches.pop_back();
    }
    double loss_sum = 0;
    for (const auto& b : batches) {
      auto ctx = model::ForwardContext::train(cfg_.dropout_p, rng_.dropout_retrieval);
      const auto q = encoder_.forward(utterances(b), ctx).pooled;
      const auto p = encoder_.forward(retrieval_responses(b), ctx).pooled;
      const auto loss = obj::retrieval_loss(q, p, cfg_.tau);
      check_finite(loss, "retrieval", epoch);
      optimizer_step(params, loss, opts);
      loss_sum += static_cast<double>(loss.item());
    }
    EpochRecord rec{"retrieval", epoch, loss_sum / static_cast<double>(batches.size()),
                    retrieval_recall(pairs), kNotApplicable};
    logger().info("seed {} retrieval epoch {}: loss {:.4f} recall@1 {:.3f}", seed_, epoch, rec.loss, rec.diagnostic);
    curve.push_back(rec);
    if (cb && !cb(rec)) break;
  }
  return curve;
}

template <typename T>
std::vector<EpochRecord> Trainer<T>::pretrain_generation(const EpochCallback& cb) {
  std::vector<EpochRecord> curve;
  decoder_ = model::ResponseDecoder<T>::from_encoder(encoder_, rng_.init_decoder);
  const auto pairs = response_pairs(cfg_.generation_max_pairs);
  if (pairs.empty()) {
    logger().warn("generation pre-training skipped: no usable pairs");
    return curve;
  }
  auto params = encoder_.parameters();
  for (auto* p : decoder_->parameters()) params.push_back(p);
  reset_state(params);
  const auto opts = cfg_.adamw();
  for (std::size_t epoch = 1; epoch <= cfg_.generation_epochs; ++epoch) {
    const auto batches = make_batches(pairs, cfg_.pretrain_batch, rng_.shuffle_generation);
    double loss_sum = 0;
    for (const auto& b : batches) {
      auto ctx = model::ForwardContext::train(cfg_.dropout_p, rng_.dropout_generation);
      const auto resp = generation_responses(b);
      const auto memory = encoder_.forward(utterances(b), ctx);
      const auto logits = decoder_->forward_teacher_forced(memory, resp, ctx);
      const auto loss = obj::generation_loss(logits, obj::shifted_targets(resp, Vocab::kPad),
                                             cfg_.gen_loss_reduction, b.size(), Vocab::kPad);
      check_finite(loss, "generation", epoch);
      optimizer_step(params, loss, opts);
      loss_sum += static_cast<double>(loss.item());
    }
    EpochRecord rec{"generation", epoch, loss_sum / static_cast<double>(batches.size()),
                    generation_token_loss(pairs), kNotApplicable};
    logger().info("seed {} generation epoch {}: loss {:.4f} token loss {:.4f}", seed_, epoch, rec.loss, rec.diagnostic);
    curve.push_back(rec);
    if (cb && !cb(rec)) break;
  }
  return curve;
}

template <typename T>
std::vector<EpochRecord> Trainer<T>::pretrain(const EpochCallback& cb) {
  std::vector<EpochRecord> curve;
  auto append = [&](std::vector<EpochRecord> part) { curve.insert(curve.end(), part.begin(), part.end()); };
  const bool retrieval_first = cfg_.task_order == TaskOrder::retrieval_first;
  for (int step = 0; step < 2; ++step) {
    const bool retrieval = (step == 0) == retrieval_first;
    if (retrieval && cfg_.use_retrieval) append(pretrain_retrieval(cb));
    if (!retrieval && cfg_.use_generation) append(pretrain_generation(cb));
  }
  return curve;
}

template <typename T>
std::vector<EpochRecord> Trainer<T>::finetune(const EpochCallback& cb) {
  std::vector<EpochRecord> curve;
  head_ = model::IntentClassifier<T>(cfg_.pooled_dim, data_->labels.size(), rng_.init_classifier);
  selected_epoch_ = 0;
  const auto& train = data_->train;
  if (train.empty()) throw std::invalid_argument("fine-tuning needs a nonempty training split");
  const bool single = cfg_.mode == text::LabelMode::single;
  std::vector<std::size_t> all(train.size());
  std::iota(all.begin(), all.end(), 0);

  auto params = encoder_.parameters();
  for (auto* p : head_->parameters()) params.push_back(p);
  reset_state(params);
  const auto opts = cfg_.adamw();
  const obj::LossWeights weights{cfg_.lambda};
  const bool select_best = cfg_.selection == Selection::best_valid && !data_->valid.empty();
  std::optional<model::ConversationalEncoder<T>> best_encoder;
  std::optional<model::IntentClassifier<T>> best_head;
  double best_valid = -1;
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 1; epoch <= cfg_.finetune_epochs; ++epoch) {
    const auto batches = make_batches(all, cfg_.finetune_batch, rng_.shuffle_finetune);
    double loss_sum = 0;
    for (const auto& b : batches) {
      const auto batch = utterances(b);
      auto ctx = model::ForwardContext::train(cfg_.dropout_p, rng_.dropout_finetune);
      const auto logits = head_->logits(encoder_.forward(batch, ctx).pooled);
      num::Tensor<T> ce;
      if (single) {
        std::vector<int> labels;
        for (auto i : b) labels.push_back(train[i].label);
        ce = obj::classification_loss_from_logits(logits, labels);
      } else {
        std::vector<std::uint8_t> hot;
        for (auto i : b) hot.insert(hot.end(), train[i].multi_hot.begin(), train[i].multi_hot.end());
        ce = obj::multilabel_loss(logits, hot);
      }
      num::Tensor<T> loss = ce;
      if (cfg_.use_uns_cl) {
        auto views = model::ForwardContext::train(cfg_.dropout_p, rng_.views);
        const auto q_hat = encoder_.forward(batch, views).pooled;
        const auto q_bar = encoder_.forward(batch, views).pooled;
        loss = obj::combined_finetune_loss(ce, obj::unsup_contrastive_loss(q_hat, q_bar, cfg_.tau), weights);
      }
      check_finite(loss, "finetune", epoch);
      optimizer_step(params, loss, opts);
      loss_sum += static_cast<double>(loss.item());
    }
    EpochRecord rec{"finetune", epoch, loss_sum / static_cast<double>(batches.size()), headline(train),
                    data_->valid.empty() ? kNotApplicable : headline(data_->valid)};
    logger().info("seed {} finetune epoch {}: loss {:.4f} train {:.3f} valid {:.3f}", seed_, epoch, rec.loss,
                  rec.diagnostic, rec.valid_metric);
    curve.push_back(rec);
    selected_epoch_ = epoch;
    // Ties go to the later epoch.
    if (select_best && rec.valid_metric >= best_valid) {
      best_valid = rec.valid_metric;
      best_encoder = encoder_;
      best_head = head_;
      best_epoch = epoch;
    }
    if (cb && !cb(rec)) break;
  }
  if (select_best && best_encoder) {
    encoder_ = std::move(*best_encoder);
    head_ = std::move(best_head);
    selected_epoch_ = best_epoch;
  }
  return curve;
}

template <typename T>
std::vector<eval::Prediction> Trainer<T>::predict(std::span<const text::EncodedExample> examples) const {
  if (!head_) throw std::logic_error("predict needs a fine-tuned classifier");
  return eval::predict(encoder_, *head_, examples, cfg_.mode, cfg_.eval_batch);
}

template <typename T>
Metrics Trainer<T>::evaluate(std::span<const text::EncodedExample> examples) const {
  return score(predict(examples), cfg_.mode);
}

template <typename T>
double Trainer<T>::headline(std::span<const text::EncodedExample> examples) const {
  if (examples.empty()) return kNotApplicable;
  const auto preds = predict(examples);
  return cfg_.mode == text::LabelMode::single ? eval::accuracy(preds)
                                              : eval::multilabel_metrics(preds).subset_accuracy;
}

template <typename T>
void Trainer<T>::save_checkpoint(const std::filesystem::path& path, model::StageTag stage) const {
  auto header = checkpoint_header(cfg_, *data_, encoder_.config(), seed_);
  header["selected_epoch"] = selected_epoch_;
  auto params = encoder_.parameters();
  header["has_decoder"] = decoder_.has_value() && stage == model::StageTag::generation;
  if (decoder_ && stage == model::StageTag::generation)
    for (const auto* p : decoder_->parameters()) params.push_back(p);
  header["has_classifier"] = head_.has_value();
  if (head_)
    for (const auto* p : head_->parameters()) params.push_back(p);
  model::write_checkpoint<T>(path, stage, header, params);
}

template <typename T>
std::vector<std::string> Trainer<T>::load_checkpoint(const std::filesystem::path& path,
                                                     model::StageTag target) {
  const auto ckpt = model::read_checkpoint(path);
  std::vector<std::string> warnings;
  if (auto w = model::stage_warning(ckpt.stage, target)) {
    logger().warn("{}", *w);
    warnings.push_back(*w);
  }
  const auto file_model = ckpt.header.at("model").get<model::EncoderConfig>();
  if (!(file_model == encoder_.config()))
    throw std::invalid_argument("checkpoint model config does not match: file has " +
                                nlohmann::json(file_model).dump() + ", trainer has " +
                                nlohmann::json(encoder_.config()).dump());
  if (ckpt.header.at("vocab").get<std::vector<std::string>>() != data_->vocab.tokens())
    throw std::invalid_argument("checkpoint vocabulary does not match the prepared data");
  auto params = encoder_.parameters();
  model::restore_parameters<T>(ckpt, params);
  if (target == model::StageTag::generation && ckpt.header.value("has_decoder", false)) {
    num::Rng scratch(0);
    decoder_ = model::ResponseDecoder<T>::from_encoder(encoder_, scratch);
    auto dparams = decoder_->parameters();
    model::restore_parameters<T>(ckpt, dparams);
  }
  if (target == model::StageTag::finetuned && ckpt.header.value("has_classifier", false)) {
    num::Rng scratch(0);
    head_ = model::IntentClassifier<T>(cfg_.pooled_dim, data_->labels.size(), scratch);
    auto hparams = head_->parameters();
    model::restore_parameters<T>(ckpt, hparams);
    selected_epoch_ = ckpt.header.value("selected_epoch", std::size_t{0});
  }
  return warnings;
}

template <typename T>
LoadedModel<T> load_model(const model::Checkpoint& ckpt) {
  LoadedModel<T> m;
  m.config = config_from_json(ckpt.header.at("config"));
  m.vocab = text::Vocab::from_tokens(ckpt.header.at("vocab").get<std::vector<std::string>>());
  m.labels = text::LabelSet(ckpt.header.at("labels").get<std::vector<std::string>>());
  m.stage = ckpt.stage;
  const auto enc_cfg = ckpt.header.at("model").get<model::EncoderConfig>();
  num::Rng scratch(0);
  m.encoder = model::ConversationalEncoder<T>(enc_cfg, scratch);
  auto params = m.encoder.parameters();
  model::restore_parameters<T>(ckpt, params);
  if (ckpt.header.value("has_classifier", false)) {
    m.classifier = model::IntentClassifier<T>(enc_cfg.pooled_dim, m.labels.size(), scratch);
    auto hparams = m.classifier->parameters();
    model::restore_parameters<T>(ckpt, hparams);
  }
  return m;
}

template class Trainer<float>;
template class Trainer<double>;
template LoadedModel<float> load_model<float>(const model::Checkpoint&);
template LoadedModel<double> load_model<double>(const model::Checkpoint&);

}  // namespace rsvp::train

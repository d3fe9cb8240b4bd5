#include "rsvp/eval/inference.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rsvp/error.hpp"
#include "rsvp/numerics/ops.hpp"
#include "rsvp/text/vocab.hpp"

namespace rsvp::eval {

namespace {

text::TokenBatch utterance_batch(std::span<const text::EncodedExample> chunk) {
  std::vector<std::span<const int>> seqs;
  seqs.reserve(chunk.size());
  for (const auto& ex : chunk) seqs.emplace_back(ex.utterance_ids);
  return text::TokenBatch::pack(seqs, text::Vocab::kPad);
}

template <typename T, typename F>
void for_each_chunk(const model::ConversationalEncoder<T>& encoder,
                    std::span<const text::EncodedExample> examples, std::size_t batch_size, F&& f) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  num::NoGradGuard guard;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const auto chunk = examples.subspan(start, std::min(batch_size, examples.size() - start));
    f(chunk, encoder.forward(utterance_batch(chunk)).pooled);
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string intent_column(const text::EncodedExample& ex) { return ex.first_intent; }

}  // namespace

template <typename T>
std::vector<std::vector<T>> embed_utterances(const model::ConversationalEncoder<T>& encoder,
                                             std::span<const text::EncodedExample> examples,
                                             std::size_t batch_size) {
  std::vector<std::vector<T>> out;
  out.reserve(examples.size());
  for_each_chunk(encoder, examples, batch_size, [&](auto chunk, const num::Tensor<T>& pooled) {
    const std::size_t d = pooled.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      auto row = pooled.data().subspan(i * d, d);
      out.emplace_back(row.begin(), row.end());
    }
  });
  return out;
}

template <typename T>
std::vector<Prediction> predict(const model::ConversationalEncoder<T>& encoder,
                                const model::IntentClassifier<T>& head,
                                std::span<const text::EncodedExample> examples,
                                text::LabelMode mode, std::size_t batch_size) {
  std::vector<Prediction> out;
  out.reserve(examples.size());
  for_each_chunk(encoder, examples, batch_size, [&](auto chunk, const num::Tensor<T>& pooled) {
    const auto logits = head.logits(pooled);
    const std::size_t C = logits.dim(1);
    const auto scores = mode == text::LabelMode::single ? num::softmax(logits, 1) : logits;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Prediction p;
      p.scores.resize(C);
      for (std::size_t c = 0; c < C; ++c) {
        const double z = scores.data()[i * C + c];
        p.scores[c] = mode == text::LabelMode::single ? z : 1.0 / (1.0 + std::exp(-z));
      }
      p.gold = chunk[i].label;
      p.gold_set = chunk[i].multi_hot;
      out.push_back(std::move(p));
    }
  });
  return out;
}

SingleLabelScores single_label_scores(std::span<const Prediction> preds) {
  return {accuracy(preds), mrr_at_k(preds, 3), mrr_at_k(preds, 5)};
}

template <typename T>
void export_embeddings(const model::ConversationalEncoder<T>& encoder,
                       std::span<const text::EncodedExample> examples,
                       const std::filesystem::path& path, std::size_t batch_size) {
  const auto rows = embed_utterances(encoder, examples, batch_size);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::size_t d = encoder.config().pooled_dim;
  out << "id,intent";
  for (std::size_t k = 0; k < d; ++k) out << ",e" << k;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << csv_field(examples[i].id) << ',' << csv_field(intent_column(examples[i]));
    for (T v : rows[i]) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<EmbeddingRow> load_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty embedding CSV", 1);
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "id" || header[1] != "intent")
    throw ParseError("embedding CSV header must start with id,intent", 1);
  std::vector<EmbeddingRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()), lineno);
    EmbeddingRow r{fields[0], fields[1], {}};
    for (std::size_t k = 2; k < fields.size(); ++k) r.values.push_back(std::stod(fields[k]));
    rows.push_back(std::move(r));
  }
  return rows;
}

#define RSVP_INSTANTIATE(T)                                                                        \
  template std::vector<std::vector<T>> embed_utterances(const model::ConversationalEncoder<T>&,   \
                                                        std::span<const text::EncodedExample>,    \
                                                        std::size_t);                              \
  template std::vector<Prediction> predict(const model::ConversationalEncoder<T>&,                \
                                           const model::IntentClassifier<T>&,                      \
                                           std::span<const text::EncodedExample>, text::LabelMode, \
                                           std::size_t);                                           \
  template void export_embeddings(const model::ConversationalEncoder<T>&,                         \
                                  std::span<const text::EncodedExample>,                           \
                                  const std::filesystem::path&, std::size_t);

RSVP_INSTANTIATE(float)
RSVP_INSTANTIATE(double)

}  // namespace rsvp::eval

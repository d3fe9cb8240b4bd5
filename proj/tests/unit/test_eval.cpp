#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "rsvp/eval/inference.hpp"
#include "rsvp/eval/metrics.hpp"
#include "rsvp/text/vocab.hpp"

using namespace rsvp;
using eval::Prediction;

namespace {

Prediction pred(std::vector<double> s, int gold) { return Prediction{std::move(s), gold, {}}; }

std::vector<Prediction> random_preds(std::size_t n, std::size_t C, num::Rng& rng, bool coarse = false) {
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(C);
    // Coarse scores create ties on purpose.
    for (auto& v : s) v = coarse ? static_cast<double>(rng.below(4)) : rng.uniform();
    out.push_back(pred(std::move(s), static_cast<int>(rng.below(C))));
  }
  return out;
}

// Rank by explicit stable sort on (-score, index).
std::size_t sort_rank(const std::vector<double>& s, int gold) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return static_cast<std::size_t>(std::find(idx.begin(), idx.end(), static_cast<std::size_t>(gold)) - idx.begin()) + 1;
}

}  // namespace

TEST_CASE("accuracy") {
  std::vector<Prediction> all{pred({0.9, 0.1}, 0), pred({0.2, 0.8}, 1)};
  CHECK(eval::accuracy(all) == 1.0);
  std::vector<Prediction> quarter{pred({0.9, 0.1}, 0), pred({0.9, 0.1}, 1), pred({0.1, 0.9}, 0),
                                  pred({0.6, 0.4}, 1)};
  CHECK(eval::accuracy(quarter) == 0.25);
  std::vector<Prediction> tie{pred({0.5, 0.5}, 0), pred({0.5, 0.5}, 1)};
  CHECK(eval::accuracy(tie) == 0.5);
  CHECK_THROWS(eval::accuracy(std::vector<Prediction>{}));

  num::Rng rng(1);
  for (bool coarse : {false, true}) {
    auto preds = random_preds(100, 6, rng, coarse);
    std::size_t hits = 0;
    for (const auto& p : preds) {
      std::size_t best = 0;
      for (std::size_t c = 0; c < p.scores.size(); ++c)
        if (p.scores[c] > p.scores[best]) best = c;
      hits += static_cast<int>(best) == p.gold;
    }
    CHECK(eval::accuracy(preds) == static_cast<double>(hits) / 100.0);
  }
}

TEST_CASE("mrr@k definition cases") {
  std::vector<Prediction> top{pred({0.7, 0.2, 0.1}, 0), pred({0.1, 0.8, 0.1}, 1)};
  CHECK(eval::mrr_at_k(top, 3) == 1.0);
  CHECK(eval::mrr_at_k(top, 5) == 1.0);

  std::vector<Prediction> second{pred({0.5, 0.3, 0.2, 0.0, 0.0}, 1)};
  CHECK(eval::mrr_at_k(second, 3) == 0.5);
  std::vector<Prediction> fourth{pred({0.4, 0.3, 0.2, 0.1, 0.0}, 3)};
  CHECK(eval::mrr_at_k(fourth, 3) == 0.0);
  CHECK(eval::mrr_at_k(fourth, 5) == 0.25);
  CHECK_THROWS_AS(eval::mrr_at_k(top, 0), std::invalid_argument);
  CHECK(eval::rank_of(std::vector<double>{0.5, 0.5, 0.5}, 2) == 3);
}

TEST_CASE("mrr@k against a sort oracle, ordering and permutation invariance") {
  num::Rng rng(2);
  for (bool coarse : {false, true}) {
    auto preds = random_preds(200, 8, rng, coarse);
    for (int k : {1, 3, 5, 8}) {
      double oracle = 0;
      for (const auto& p : preds) {
        const auto r = sort_rank(p.scores, p.gold);
        if (r <= static_cast<std::size_t>(k)) oracle += 1.0 / static_cast<double>(r);
      }
      CHECK(std::abs(eval::mrr_at_k(preds, k) - oracle / 200.0) <= 1e-12);
    }
    CHECK(eval::mrr_at_k(preds, 1) == eval::accuracy(preds));
    const double acc = eval::accuracy(preds), m3 = eval::mrr_at_k(preds, 3), m5 = eval::mrr_at_k(preds, 5);
    CHECK(acc <= m3);
    CHECK(m3 <= m5);
    CHECK(m5 <= 1.0);

    auto shuffled = preds;
    rng.shuffle(shuffled);
    CHECK(eval::accuracy(shuffled) == acc);
    CHECK(std::abs(eval::mrr_at_k(shuffled, 5) - m5) <= 1e-12);
  }
}

TEST_CASE("multi-label metrics") {
  std::vector<Prediction> perfect{{{0.9, 0.1, 0.8}, -1, {1, 0, 1}}, {{0.2, 0.7, 0.1}, -1, {0, 1, 0}}};
  auto m = eval::multilabel_metrics(perfect);
  CHECK(m.micro_f1 == 1.0);
  CHECK(m.subset_accuracy == 1.0);
  CHECK(m.macro_f1 == 1.0);

  std::vector<Prediction> partial{{{0.9, 0.3}, -1, {1, 1}}};
  m = eval::multilabel_metrics(partial);
  CHECK(m.subset_accuracy == 0.0);
  CHECK(m.tp == 1);
  CHECK(m.fn == 1);
  CHECK(m.fp == 0);
  CHECK(m.micro_f1 == doctest::Approx(2.0 / 3.0));

  // Exactly 0.5 is not a positive prediction.
  std::vector<Prediction> edge{{{0.5}, -1, {1}}};
  CHECK(eval::multilabel_metrics(edge).fn == 1);

  num::Rng rng(3);
  std::vector<Prediction> preds;
  for (int i = 0; i < 150; ++i) {
    Prediction p;
    for (int c = 0; c < 5; ++c) {
      p.scores.push_back(rng.uniform());
      p.gold_set.push_back(rng.below(3) == 0);
    }
    preds.push_back(p);
  }
  std::size_t tp = 0, fp = 0, fn = 0, exact = 0, any_correct = 0;
  std::vector<std::size_t> ctp(5), cfp(5), cfn(5);
  for (const auto& p : preds) {
    bool match = true, correct = false;
    for (int c = 0; c < 5; ++c) {
      const bool yhat = p.scores[c] > 0.5, y = p.gold_set[c];
      if (yhat && y) ++tp, ++ctp[c];
      if (yhat && !y) ++fp, ++cfp[c];
      if (!yhat && y) ++fn, ++cfn[c];
      match &= yhat == y;
      correct |= yhat == y;
    }
    exact += match;
    any_correct += correct;
  }
  m = eval::multilabel_metrics(preds);
  CHECK(m.tp == tp);
  CHECK(m.fp == fp);
  CHECK(m.fn == fn);
  CHECK(m.micro_f1 == 2.0 * tp / double(2 * tp + fp + fn));
  CHECK(m.subset_accuracy == exact / 150.0);
  double macro = 0;
  for (int c = 0; c < 5; ++c) macro += 2.0 * ctp[c] / double(2 * ctp[c] + cfp[c] + cfn[c]);
  CHECK(std::abs(m.macro_f1 - macro / 5) <= 1e-12);
  CHECK(m.subset_accuracy <= any_correct / 150.0);
}

TEST_CASE("in-batch recall@1") {
  num::Rng rng(4);
  std::vector<double> v(6 * 4);
  for (auto& x : v) x = rng.normal();
  num::Tensor<double> Q({6, 4}, v);
  CHECK(eval::in_batch_recall_at_1(Q, Q) == 1.0);

  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> a(7 * 3), b(7 * 3);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    num::Tensor<double> A({7, 3}, a), B({7, 3}, b);
    auto s = num::cosine_matrix(A, B);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < 7; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 0; j < 7; ++j)
        if (s.data()[i * 7 + j] > s.data()[i * 7 + best]) best = j;
      hits += best == i;
    }
    CHECK(eval::in_batch_recall_at_1(A, B) == hits / 7.0);
  }

  // Monte Carlo: independent embeddings give about 1/n.
  const std::size_t n = 10;
  double total = 0;
  const int reps = 400;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> a(n * 5), b(n * 5);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    total += eval::in_batch_recall_at_1(num::Tensor<double>({n, 5}, a), num::Tensor<double>({n, 5}, b));
  }
  const double mean = total / reps;
  // Std error of the mean is about sqrt(0.1*0.9/(n*reps)) = 0.005.
  CHECK(std::abs(mean - 0.1) <= 0.025);
}

TEST_CASE("embedding export: shape, determinism, round trip") {
  model::EncoderConfig c;
  c.vocab_size = 20;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ffn = 16;
  c.pooled_dim = 8;
  c.max_positions = 16;
  num::Rng rng(5);
  model::ConversationalEncoder<float> enc(c, rng);

  std::vector<text::EncodedExample> ex(5);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ex[i].id = i == 2 ? "needs,\"quoting\"" : "ex" + std::to_string(i);
    ex[i].first_intent = "intent" + std::to_string(i % 2);
    ex[i].utterance_ids = {text::Vocab::kCls};
    for (std::size_t k = 0; k <= i; ++k) ex[i].utterance_ids.push_back(6 + static_cast<int>((i * 3 + k) % 14));
  }
  const auto dir = std::filesystem::temp_directory_path() / "rsvp_test_eval";
  std::filesystem::create_directories(dir);
  eval::export_embeddings(enc, ex, dir / "a.csv", 2);
  eval::export_embeddings(enc, ex, dir / "b.csv", 2);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));

  const auto rows = eval::load_embeddings_csv(dir / "a.csv");
  REQUIRE(rows.size() == 5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].id == ex[i].id);
    CHECK(rows[i].intent == ex[i].first_intent);
    CHECK(rows[i].values.size() + 2 == 10);
    const auto q = enc.encode(ex[i].utterance_ids);
    for (std::size_t k = 0; k < q.size(); ++k) CHECK(std::abs(rows[i].values[k] - q[k]) <= 1e-6);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("predict reads no responses and returns distributions") {
  model::EncoderConfig c;
  c.vocab_size = 20;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ffn = 8;
  c.pooled_dim = 8;
  c.max_positions = 16;
  num::Rng rng(6);
  model::ConversationalEncoder<double> enc(c, rng);
  model::IntentClassifier<double> head(8, 3, rng);
  std::vector<text::EncodedExample> ex(4);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ex[i].utterance_ids = {text::Vocab::kCls, 7 + static_cast<int>(i)};
    ex[i].set_response_ids({text::Vocab::kBos, 9, text::Vocab::kEos});
    ex[i].label = static_cast<int>(i % 3);
    ex[i].multi_hot = {0, 0, 0};
    ex[i].multi_hot[i % 3] = 1;
  }
  text::EncodedExample::reset_response_reads();
  auto preds = eval::predict(enc, head, ex, text::LabelMode::single, 3);
  CHECK(text::EncodedExample::response_reads() == 0);
  for (const auto& p : preds) {
    double s = 0;
    for (double v : p.scores) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
  auto multi = eval::predict(enc, head, ex, text::LabelMode::multi, 3);
  for (const auto& p : multi)
    for (double v : p.scores) CHECK((v > 0.0 && v < 1.0));
  CHECK(multi[1].gold_set == std::vector<std::uint8_t>{0, 1, 0});
}

#include "doctest.h"

#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rsvp/cli/cli.hpp"
#include "rsvp/cli/gen_data.hpp"
#include "rsvp/text/preprocess.hpp"
#include "rsvp/trainer/runner.hpp"
#include "support/fixtures.hpp"

using namespace rsvp;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Multiclass perceptron over token counts; returns training accuracy.
double bag_of_words_train_accuracy(const std::vector<text::DialogueRecord>& train) {
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::size_t> classes;
  std::vector<std::vector<std::size_t>> docs;
  std::vector<std::size_t> gold;
  for (const auto& r : train) {
    std::vector<std::size_t> toks;
    for (const auto& turn : r.utterance_turns)
      for (const auto& t : text::tokenize(text::preprocess(turn), text::TokenizerMode::whitespace))
        toks.push_back(index.emplace(t, index.size()).first->second);
    docs.push_back(toks);
    gold.push_back(classes.emplace(r.intents.front(), classes.size()).first->second);
  }
  std::vector<std::vector<double>> w(classes.size(), std::vector<double>(index.size(), 0.0));
  auto predict = [&](const std::vector<std::size_t>& d) {
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t c = 0; c < w.size(); ++c) {
      double s = 0;
      for (auto t : d) s += w[c][t];
      if (s > best_score) best_score = s, best = c;
    }
    return best;
  };
  for (int epoch = 0; epoch < 50; ++epoch)
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const auto p = predict(docs[i]);
      if (p == gold[i]) continue;
      for (auto t : docs[i]) w[gold[i]][t] += 1, w[p][t] -= 1;
    }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) hits += predict(docs[i]) == gold[i];
  return static_cast<double>(hits) / static_cast<double>(docs.size());
}

}  // namespace

TEST_CASE("gen_data counts, intents and determinism") {
  cli::GenDataOptions g;
  g.n_intents = 5;
  g.n_per_intent = 40;
  g.seed = 7;
  const auto a = cli::gen_data(g);
  CHECK(a.size() == 200);
  std::set<std::string> intents, ids;
  for (const auto& r : a) {
    intents.insert(r.intents.front());
    ids.insert(r.id);
    CHECK(!r.response_turns.empty());
    const auto n = text::tokenize(text::preprocess(r.utterance_turns.front()), text::TokenizerMode::whitespace).size();
    CHECK(n >= 6);
    CHECK(n <= 18);
  }
  CHECK(intents.size() == 5);
  CHECK(ids.size() == 200);
  CHECK(cli::gen_data(g) == a);
  g.seed = 8;
  CHECK(cli::gen_data(g) != a);

  g.n_intents = 1;
  CHECK_THROWS(cli::gen_data(g));
  g.n_intents = 14;
  g.n_per_intent = 0;
  CHECK_THROWS(cli::gen_data(g));
  g.n_per_intent = 2;
  CHECK(cli::gen_data(g).size() == 28);
}

TEST_CASE("generated utterances are linearly separable from bag of words") {
  for (auto style : {cli::VocabStyle::basic, cli::VocabStyle::noisy}) {
    cli::GenDataOptions g;
    g.style = style;
    const auto records = cli::gen_data(g);
    const auto parts = text::split(records, {}, 42);
    CHECK(bag_of_words_train_accuracy(parts.train) >= 0.99);
  }
}

TEST_CASE("multi-intent records carry two distinct labels") {
  cli::GenDataOptions g;
  g.multi_intent_rate = 0.5;
  const auto records = cli::gen_data(g);
  std::size_t multi = 0;
  for (const auto& r : records) {
    if (r.intents.size() == 2) {
      ++multi;
      CHECK(r.intents[0] != r.intents[1]);
    }
  }
  CHECK(multi > 60);
  CHECK(multi < 140);
}

TEST_CASE("cli end to end: run, evaluate, predict, export") {
  const auto dir = testing::scratch_dir("cli-e2e");
  const auto data = (dir / "d.jsonl").string();
  REQUIRE(run({"gen-data", "--intents", "4", "--per-intent", "10", "--seed", "3", "--out", data}).code == 0);
  const auto first = testing::slurp(data);
  REQUIRE(run({"gen-data", "--intents", "4", "--per-intent", "10", "--seed", "3", "--out", data}).code == 0);
  CHECK(testing::slurp(data) == first);

  const std::vector<std::string> small{"--set", "d_model=16", "--set", "pooled_dim=16", "--set", "d_ffn=32",
                                       "--set", "n_layers=1",  "--set", "n_heads=2",      "--set", "max_len=32",
                                       "--set", "retrieval_epochs=1", "--set", "generation_epochs=1",
                                       "--set", "finetune_epochs=2",  "--set", "lr=2e-3"};
  auto with = [&](std::vector<std::string> base) {
    base.insert(base.end(), small.begin(), small.end());
    return base;
  };

  const auto run_dir = (dir / "run").string();
  const auto r = run(with({"run-rsvp", "--data", data, "--out", run_dir, "--seeds", "2,5"}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("report.json") != std::string::npos);
  const auto report = train::load_report(dir / "run/report.json");
  CHECK(report.per_seed.size() == 2);
  CHECK(report.config.d_model == 16);
  CHECK(std::filesystem::exists(dir / "run/curves.csv"));
  CHECK(std::filesystem::exists(dir / "run/timing.json"));
  CHECK(std::filesystem::exists(dir / "run/checkpoints/seed-5.ckpt"));

  const auto ev = run({"evaluate", "--ckpt", (dir / "run/checkpoints/seed-5.ckpt").string(), "--data", data});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  const auto metrics = nlohmann::json::parse(ev.out);
  for (const auto& [k, v] : report.per_seed[1].test) {
    const double got = metrics.at(k).get<double>();
    CHECK(got == v);
  }

  // Prediction ignores responses entirely.
  {
    std::ofstream out(dir / "bare.jsonl");
    out << R"({"id":"q1","utterance_turns":["hi my tokyo tour bk1 refund money back"],"response_turns":[]})" << "\n";
  }
  const auto pred_path = (dir / "pred.jsonl").string();
  const auto pr = run({"predict", "--ckpt", (dir / "run/checkpoints/seed-2.ckpt").string(), "--data",
                       (dir / "bare.jsonl").string(), "--out", pred_path});
  REQUIRE_MESSAGE(pr.code == 0, pr.err);
  const auto line = nlohmann::json::parse(testing::slurp(pred_path));
  CHECK(line.at("id") == "q1");
  CHECK(line.at("intents").size() == 1);
  CHECK(line.at("scores").size() == 4);

  const auto emb_path = (dir / "emb.csv").string();
  const auto ex = run({"export-embeddings", "--ckpt", (dir / "run/checkpoints/seed-2.ckpt").string(), "--data", data,
                       "--split", "all", "--out", emb_path});
  REQUIRE_MESSAGE(ex.code == 0, ex.err);
  const auto rows = eval::load_embeddings_csv(emb_path);
  CHECK(rows.size() == 40);
  CHECK(rows.front().values.size() == 16);
}

TEST_CASE("cli stage commands chain through checkpoints") {
  const auto dir = testing::scratch_dir("cli-stages");
  const auto data = (dir / "d.jsonl").string();
  REQUIRE(run({"gen-data", "--intents", "3", "--per-intent", "8", "--out", data}).code == 0);
  const std::vector<std::string> small{"--set", "d_model=16", "--set", "pooled_dim=16", "--set", "d_ffn=32",
                                       "--set", "n_layers=1",  "--set", "n_heads=2",      "--set", "max_len=32",
                                       "--set", "retrieval_epochs=1", "--set", "generation_epochs=1",
                                       "--set", "finetune_epochs=1",  "--seeds", "4"};
  auto with = [&](std::vector<std::string> base) {
    base.insert(base.end(), small.begin(), small.end());
    return base;
  };
  REQUIRE(run(with({"build-vocab", "--data", data, "--out", (dir / "vocab.txt").string()})).code == 0);
  CHECK(text::Vocab::load(dir / "vocab.txt").size() > text::Vocab::kReservedCount);

  const auto a = run(with({"pretrain-retrieval", "--data", data, "--out", (dir / "s1").string()}));
  REQUIRE_MESSAGE(a.code == 0, a.err);
  const auto b = run(with({"pretrain-generation", "--data", data, "--out", (dir / "s2").string(), "--init",
                           (dir / "s1/retrieval.ckpt").string()}));
  REQUIRE_MESSAGE(b.code == 0, b.err);
  const auto c = run(with({"finetune", "--data", data, "--out", (dir / "s3").string(), "--init",
                           (dir / "s2/generation.ckpt").string()}));
  REQUIRE_MESSAGE(c.code == 0, c.err);
  CHECK(std::filesystem::exists(dir / "s3/report.json"));
  const auto ckpt = model::read_checkpoint(dir / "s3/finetuned.ckpt");
  CHECK(ckpt.stage == model::StageTag::finetuned);

  const auto base = run(with({"run-baseline", "--data", data, "--out", (dir / "base").string()}));
  REQUIRE_MESSAGE(base.code == 0, base.err);
  const auto rep = train::load_report(dir / "base/report.json");
  CHECK(rep.variant == "baseline");
  CHECK(rep.config.lambda == 0);
  CHECK(!rep.config.use_retrieval);

  const auto sw = run(with({"sweep", "--axis", "lambda", "--data", data, "--out", (dir / "sweep").string(), "--set",
                            "generation_epochs=0"}));
  REQUIRE_MESSAGE(sw.code == 0, sw.err);
  const auto grid = train::load_grid_csv(dir / "sweep/grid.csv");
  CHECK(grid.size() == 4);
  CHECK(std::filesystem::exists(dir / "sweep/lambda=0.4/report.json"));
}

TEST_CASE("cli reports bad input with a nonzero exit") {
  const auto dir = testing::scratch_dir("cli-errors");
  CHECK(run({}).code != 0);
  CHECK(run({"no-such-command"}).code != 0);
  const auto data = (dir / "d.jsonl").string();
  REQUIRE(run({"gen-data", "--out", data, "--intents", "2", "--per-intent", "3"}).code == 0);
  const auto bad_key = run({"run-rsvp", "--data", data, "--out", (dir / "x").string(), "--set", "bogus=1"});
  CHECK(bad_key.code != 0);
  CHECK(bad_key.err.find("bogus") != std::string::npos);
  CHECK(run({"run-rsvp", "--data", (dir / "missing.jsonl").string(), "--out", (dir / "x").string()}).code != 0);
  CHECK(run({"sweep", "--axis", "depth", "--data", data, "--out", (dir / "x").string()}).code != 0);
  CHECK(run({"gen-data", "--out", data, "--intents", "1"}).code != 0);
  CHECK(run({"gen-data", "--out", data, "--style", "fancy"}).code != 0);
  {
    std::ofstream cfg(dir / "bad.conf");
    cfg << "lr = 1e-3\nwhat = 2\n";
  }
  const auto bad_cfg = run({"run-rsvp", "--data", data, "--out", (dir / "x").string(), "--config",
                            (dir / "bad.conf").string()});
  CHECK(bad_cfg.code != 0);
  CHECK(bad_cfg.err.find(":2:") != std::string::npos);
}

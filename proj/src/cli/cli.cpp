#include "rsvp/cli/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rsvp/cli/gen_data.hpp"
#include "rsvp/eval/inference.hpp"
#include "rsvp/log.hpp"
#include "rsvp/trainer/runner.hpp"

namespace rsvp::cli {

namespace {

using train::StageConfig;
using ojson = nlohmann::ordered_json;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string data;
};

void add_config_flags(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--config", a.config_path, "flat key = value config file");
  sub->add_option("--set", a.overrides, "key=value override (repeatable)");
  sub->add_option("--seed", a.seed, "data split / generator seed");
  sub->add_option("--seeds", a.seeds, "comma-separated run seeds");
}

StageConfig resolve_config(const CommonArgs& a) {
  StageConfig cfg;
  if (!a.config_path.empty()) cfg = train::load_config(a.config_path, cfg);
  for (const auto& o : a.overrides) train::apply_override(cfg, o);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.seeds.empty()) train::set_value(cfg, "seeds", a.seeds);
  cfg.validate();
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::uint64_t first_seed(const StageConfig& cfg) {
  if (cfg.seeds.empty()) throw std::invalid_argument("config has no seeds");
  return cfg.seeds.front();
}

// Data prepared against a checkpoint's vocabulary and labels when one is given.
train::PreparedData prepare(const std::vector<text::DialogueRecord>& records, const StageConfig& cfg,
                            const std::optional<model::Checkpoint>& init) {
  if (!init) return train::prepare_data(records, cfg);
  const auto vocab = text::Vocab::from_tokens(init->header.at("vocab").get<std::vector<std::string>>());
  const text::LabelSet labels(init->header.at("labels").get<std::vector<std::string>>());
  return train::prepare_data(records, cfg, &vocab, &labels);
}

std::string stage_summary(const StageConfig& cfg, std::uint64_t seed, model::StageTag stage,
                          const std::vector<train::EpochRecord>& curve) {
  ojson j;
  j["stage"] = model::to_string(stage);
  j["seed"] = seed;
  j["epochs_run"] = curve.size();
  if (!curve.empty()) {
    j["final_loss"] = curve.back().loss;
    j["final_diagnostic"] = std::isnan(curve.back().diagnostic) ? ojson(nullptr) : ojson(curve.back().diagnostic);
  }
  ojson c = ojson::object();
  for (const auto& [k, v] : train::to_key_values(cfg)) c[k] = v;
  j["config"] = c;
  return j.dump(2) + "\n";
}

template <typename T>
int stage_command(const CommonArgs& a, const std::string& init_path, model::StageTag stage, std::ostream& out) {
  const auto cfg = resolve_config(a);
  const auto records = text::load_jsonl(a.data);
  std::optional<model::Checkpoint> init;
  if (!init_path.empty()) init = model::read_checkpoint(init_path);
  const auto data = prepare(records, cfg, init);
  const auto seed = first_seed(cfg);
  train::Trainer<T> trainer(cfg, data, seed);
  if (!init_path.empty()) trainer.load_checkpoint(init_path, stage);

  std::vector<train::EpochRecord> curve;
  if (stage == model::StageTag::retrieval) curve = trainer.pretrain_retrieval();
  else if (stage == model::StageTag::generation) curve = trainer.pretrain_generation();
  else curve = trainer.finetune();

  const std::filesystem::path dir = a.out;
  std::filesystem::create_directories(dir);
  const auto ckpt = dir / (std::string(model::to_string(stage)) + ".ckpt");
  trainer.save_checkpoint(ckpt, stage);
  train::RunReport report;
  report.variant = std::string(model::to_string(stage));
  report.config = cfg;
  train::SeedResult res;
  res.seed = seed;
  res.curve = curve;
  report.per_seed.push_back(res);
  if (stage == model::StageTag::finetuned) {
    auto& s = report.per_seed.back();
    s.selected_epoch = trainer.selected_epoch();
    s.train = trainer.evaluate(data.train);
    s.valid = trainer.evaluate(data.valid);
    s.test = trainer.evaluate(data.test);
    report.mean_valid = s.valid;
    report.mean_test = s.test;
    train::write_report(report, dir);
    out << (dir / "report.json").string() << "\n";
  } else {
    write_text(dir / "curves.csv", train::curves_csv(report));
    write_text(dir / "stage.json", stage_summary(cfg, seed, stage, curve));
    out << (dir / "stage.json").string() << "\n";
  }
  out << ckpt.string() << "\n";
  return 0;
}

int dispatch_stage(const CommonArgs& a, const std::string& init, model::StageTag stage, std::ostream& out) {
  return resolve_config(a).precision == train::Precision::float64 ? stage_command<double>(a, init, stage, out)
                                                                 : stage_command<float>(a, init, stage, out);
}

enum class SplitName { train, valid, test, all };

SplitName parse_split(std::string_view s) {
  if (s == "train") return SplitName::train;
  if (s == "valid") return SplitName::valid;
  if (s == "test") return SplitName::test;
  if (s == "all") return SplitName::all;
  throw std::invalid_argument("unknown split '" + std::string(s) + "' (train, valid, test, all)");
}

// Re-creates the checkpoint's own split so test metrics line up with its report.
std::vector<text::EncodedExample> examples_for(const model::Checkpoint& ckpt, const std::string& data_path,
                                               SplitName split, bool require_intents) {
  const auto cfg = train::config_from_json(ckpt.header.at("config"));
  const auto vocab = text::Vocab::from_tokens(ckpt.header.at("vocab").get<std::vector<std::string>>());
  const text::LabelSet labels(ckpt.header.at("labels").get<std::vector<std::string>>());
  auto records = text::load_jsonl(data_path, require_intents);
  if (split == SplitName::all) return text::encode_all(records, vocab, labels, cfg.encode_options());
  const auto data = train::prepare_data(records, cfg, &vocab, &labels);
  return split == SplitName::train ? data.train : split == SplitName::valid ? data.valid : data.test;
}

template <typename T>
int evaluate_command(const model::Checkpoint& ckpt, const std::string& data, SplitName split,
                     const std::string& out_path, std::ostream& out) {
  const auto m = train::load_model<T>(ckpt);
  if (!m.classifier) throw std::invalid_argument("evaluate needs a finetuned checkpoint");
  const auto examples = examples_for(ckpt, data, split, true);
  const auto preds = eval::predict(m.encoder, *m.classifier, examples, m.config.mode, m.config.eval_batch);
  ojson j = ojson::object();
  for (const auto& [k, v] : train::score(preds, m.config.mode)) j[k] = v;
  const auto text = j.dump(2) + "\n";
  if (!out_path.empty()) write_text(out_path, text);
  out << text;
  return 0;
}

template <typename T>
int predict_command(const model::Checkpoint& ckpt, const std::string& data, const std::string& out_path,
                    std::ostream& out) {
  const auto m = train::load_model<T>(ckpt);
  if (!m.classifier) throw std::invalid_argument("predict needs a finetuned checkpoint");
  auto records = text::load_jsonl(data, false);
  std::vector<text::EncodedExample> examples;
  auto opts = m.config.encode_options();
  for (auto rec : records) {
    // Gold labels are not needed and may name unseen intents.
    rec.intents.clear();
    examples.push_back(text::encode(rec, m.vocab, m.labels, opts));
  }
  const auto preds = eval::predict(m.encoder, *m.classifier, examples, m.config.mode, m.config.eval_batch);
  std::string text;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ojson j;
    j["id"] = examples[i].id;
    std::vector<std::string> predicted;
    if (m.config.mode == text::LabelMode::single) {
      predicted.push_back(m.labels.names()[eval::argmax(preds[i].scores)]);
    } else {
      for (std::size_t c = 0; c < preds[i].scores.size(); ++c)
        if (preds[i].scores[c] > 0.5) predicted.push_back(m.labels.names()[c]);
    }
    j["intents"] = predicted;
    ojson scores = ojson::object();
    for (std::size_t c = 0; c < preds[i].scores.size(); ++c) scores[m.labels.names()[c]] = preds[i].scores[c];
    j["scores"] = scores;
    text += j.dump() + "\n";
  }
  if (out_path.empty()) {
    out << text;
  } else {
    write_text(out_path, text);
    out << out_path << "\n";
  }
  return 0;
}

template <typename T>
int export_command(const model::Checkpoint& ckpt, const std::string& data, SplitName split,
                   const std::string& out_path, std::ostream& out) {
  const auto m = train::load_model<T>(ckpt);
  const auto examples = examples_for(ckpt, data, split, false);
  if (std::filesystem::path(out_path).has_parent_path())
    std::filesystem::create_directories(std::filesystem::path(out_path).parent_path());
  eval::export_embeddings(m.encoder, examples, out_path, m.config.eval_batch);
  out << out_path << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  init_logging();
  CLI::App app{"RSVP intent detection: pre-training, fine-tuning, evaluation", "rsvp"};
  app.require_subcommand(1);
  CommonArgs a;

  GenDataOptions gen;
  std::string style = "basic";
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic JSONL dataset");
  gen_cmd->add_option("--intents", gen.n_intents)->capture_default_str();
  gen_cmd->add_option("--per-intent", gen.n_per_intent)->capture_default_str();
  gen_cmd->add_option("--style", style, "basic or noisy")->capture_default_str();
  gen_cmd->add_option("--multi-rate", gen.multi_intent_rate, "fraction of two-intent records")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", a.out, "output JSONL")->required();

  auto* vocab_cmd = app.add_subcommand("build-vocab", "build the vocabulary from the training split");
  add_config_flags(vocab_cmd, a);
  vocab_cmd->add_option("--data", a.data)->required();
  vocab_cmd->add_option("--out", a.out, "vocabulary file")->required();

  std::string init;
  auto stage_cmd = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    add_config_flags(sub, a);
    sub->add_option("--data", a.data)->required();
    sub->add_option("--out", a.out, "output directory")->required();
    sub->add_option("--init", init, "checkpoint to continue from");
    return sub;
  };
  auto* retr_cmd = stage_cmd("pretrain-retrieval", "response retrieval pre-training");
  auto* gen_stage_cmd = stage_cmd("pretrain-generation", "response generation pre-training");
  auto* ft_cmd = stage_cmd("finetune", "intent classifier fine-tuning");

  auto run_cmd = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    add_config_flags(sub, a);
    sub->add_option("--data", a.data)->required();
    sub->add_option("--out", a.out, "output directory")->required();
    return sub;
  };
  auto* rsvp_cmd = run_cmd("run-rsvp", "full pipeline over every seed");
  auto* base_cmd = run_cmd("run-baseline", "classifier without pre-training");
  bool with_uns_cl = false;
  base_cmd->add_flag("--with-uns-cl", with_uns_cl, "keep the dropout-view contrastive term");
  auto* sweep_cmd = run_cmd("sweep", "grid over one axis");
  std::string axis;
  sweep_cmd->add_option("--axis", axis, "batch_n, lambda or variant")->required();

  std::string ckpt_path, split = "test";
  auto ckpt_cmd = [&](const char* name, const char* help, bool out_required) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--ckpt", ckpt_path)->required();
    sub->add_option("--data", a.data)->required();
    auto* o = sub->add_option("--out", a.out);
    if (out_required) o->required();
    return sub;
  };
  auto* eval_cmd = ckpt_cmd("evaluate", "metrics of a finetuned checkpoint", false);
  eval_cmd->add_option("--split", split, "train, valid, test or all")->capture_default_str();
  auto* pred_cmd = ckpt_cmd("predict", "intent predictions as JSONL", false);
  auto* emb_cmd = ckpt_cmd("export-embeddings", "pooled utterance embeddings as CSV", true);
  emb_cmd->add_option("--split", split, "train, valid, test or all")->capture_default_str();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (gen_cmd->parsed()) {
      gen.style = parse_vocab_style(style);
      const auto records = gen_data(gen);
      if (std::filesystem::path(a.out).has_parent_path())
        std::filesystem::create_directories(std::filesystem::path(a.out).parent_path());
      text::write_jsonl(a.out, records);
      out << a.out << "\n";
      return 0;
    }
    if (vocab_cmd->parsed()) {
      const auto cfg = resolve_config(a);
      const auto data = train::prepare_data(text::load_jsonl(a.data), cfg);
      if (std::filesystem::path(a.out).has_parent_path())
        std::filesystem::create_directories(std::filesystem::path(a.out).parent_path());
      data.vocab.save(a.out);
      out << a.out << "\n";
      return 0;
    }
    if (retr_cmd->parsed()) return dispatch_stage(a, init, model::StageTag::retrieval, out);
    if (gen_stage_cmd->parsed()) return dispatch_stage(a, init, model::StageTag::generation, out);
    if (ft_cmd->parsed()) return dispatch_stage(a, init, model::StageTag::finetuned, out);

    if (rsvp_cmd->parsed() || base_cmd->parsed() || sweep_cmd->parsed()) {
      const auto cfg = resolve_config(a);
      const std::filesystem::path dir = a.out;
      const auto data = train::prepare_data(text::load_jsonl(a.data), cfg);
      train::RunOptions opts;
      opts.checkpoint_dir = dir / "checkpoints";
      if (sweep_cmd->parsed()) {
        const auto ax = train::parse_sweep_axis(axis);
        const auto res = train::run_sweep(data, cfg, ax, opts);
        for (const auto& r : res.reports) train::write_report(r, dir / r.variant);
        train::write_grid_csv(dir / "grid.csv", res.rows);
        out << (dir / "grid.csv").string() << "\n";
        return 0;
      }
      const auto report = rsvp_cmd->parsed() ? train::run_rsvp(data, cfg, opts)
                                             : train::run_baseline_classifier(data, cfg, with_uns_cl, opts);
      train::write_report(report, dir);
      out << (dir / "report.json").string() << "\n";
      return 0;
    }

    const auto ckpt = model::read_checkpoint(ckpt_path);
    const bool f64 = ckpt.precision == "float64";
    if (eval_cmd->parsed())
      return f64 ? evaluate_command<double>(ckpt, a.data, parse_split(split), a.out, out)
                 : evaluate_command<float>(ckpt, a.data, parse_split(split), a.out, out);
    if (pred_cmd->parsed())
      return f64 ? predict_command<double>(ckpt, a.data, a.out, out) : predict_command<float>(ckpt, a.data, a.out, out);
    if (emb_cmd->parsed())
      return f64 ? export_command<double>(ckpt, a.data, parse_split(split), a.out, out)
                 : export_command<float>(ckpt, a.data, parse_split(split), a.out, out);
  } catch (const std::exception& e) {
    err << "rsvp: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace rsvp::cli

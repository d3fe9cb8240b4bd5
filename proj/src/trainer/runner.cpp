#include "rsvp/trainer/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rsvp/error.hpp"
#include "rsvp/log.hpp"

namespace rsvp::train {

using ojson = nlohmann::ordered_json;

namespace {

std::string fmt17(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view s) {
  if (s.empty()) return kNotApplicable;
  std::string tmp(s);
  std::size_t used = 0;
  const double v = std::stod(tmp, &used);
  if (used != tmp.size()) throw ParseError("bad number '" + tmp + "'", 0);
  return v;
}

ojson metrics_json(const Metrics& m) {
  ojson j = ojson::object();
  for (const auto& [k, v] : m) j[k] = std::isnan(v) ? ojson(nullptr) : ojson(v);
  return j;
}

Metrics metrics_from(const ojson& j) {
  Metrics m;
  for (auto it = j.begin(); it != j.end(); ++it)
    m.emplace_back(it.key(), it.value().is_null() ? kNotApplicable : it.value().get<double>());
  return m;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out(1);
  for (char c : line) {
    if (c == ',') out.emplace_back();
    else out.back().push_back(c);
  }
  return out;
}

template <typename T>
SeedResult run_seed_typed(const PreparedData& data, const StageConfig& cfg, std::uint64_t seed,
                          const RunOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  Trainer<T> trainer(cfg, data, seed);
  EpochCallback cb;
  if (opts.callback) cb = [&](const EpochRecord& r) { return opts.callback(seed, r); };
  SeedResult res;
  res.seed = seed;
  res.curve = trainer.pretrain(cb);
  const auto ft = trainer.finetune(cb);
  res.curve.insert(res.curve.end(), ft.begin(), ft.end());
  res.selected_epoch = trainer.selected_epoch();
  res.train = trainer.evaluate(data.train);
  res.valid = trainer.evaluate(data.valid);
  res.test = trainer.evaluate(data.test);
  if (opts.checkpoint_dir) {
    std::filesystem::create_directories(*opts.checkpoint_dir);
    trainer.save_checkpoint(*opts.checkpoint_dir / ("seed-" + std::to_string(seed) + ".ckpt"),
                            model::StageTag::finetuned);
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace

Metrics mean_metrics(std::span<const Metrics> rows) {
  if (rows.empty()) return {};
  Metrics out = rows.front();
  for (auto& [k, v] : out) v = 0;
  for (const auto& r : rows) {
    if (r.size() != out.size()) throw std::invalid_argument("metric rows differ in shape");
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (r[i].first != out[i].first) throw std::invalid_argument("metric rows differ in keys");
      out[i].second += r[i].second;
    }
  }
  for (auto& [k, v] : out) v /= static_cast<double>(rows.size());
  return out;
}

namespace {

ojson report_ordered(const RunReport& r) {
  ojson j;
  j["variant"] = r.variant;
  ojson cfg = ojson::object();
  for (const auto& [k, v] : to_key_values(r.config)) cfg[k] = v;
  j["config"] = cfg;
  ojson seeds = ojson::array();
  for (const auto& s : r.per_seed) {
    ojson row;
    row["seed"] = s.seed;
    row["selected_epoch"] = s.selected_epoch;
    row["train"] = metrics_json(s.train);
    row["valid"] = metrics_json(s.valid);
    row["test"] = metrics_json(s.test);
    seeds.push_back(row);
  }
  j["per_seed"] = seeds;
  j["mean"] = {{"valid", metrics_json(r.mean_valid)}, {"test", metrics_json(r.mean_test)}};
  j["curves"] = "curves.csv";
  return j;
}

}  // namespace

std::string report_json(const RunReport& r) { return report_ordered(r).dump(2) + "\n"; }

RunReport parse_report(std::string_view text) {
  const auto j = ojson::parse(text);
  RunReport r;
  r.variant = j.at("variant").get<std::string>();
  for (auto it = j.at("config").begin(); it != j.at("config").end(); ++it)
    set_value(r.config, it.key(), it.value().get<std::string>());
  for (const auto& row : j.at("per_seed")) {
    SeedResult s;
    s.seed = row.at("seed").get<std::uint64_t>();
    s.selected_epoch = row.at("selected_epoch").get<std::size_t>();
    s.train = metrics_from(row.at("train"));
    s.valid = metrics_from(row.at("valid"));
    s.test = metrics_from(row.at("test"));
    r.per_seed.push_back(std::move(s));
  }
  r.mean_valid = metrics_from(j.at("mean").at("valid"));
  r.mean_test = metrics_from(j.at("mean").at("test"));
  return r;
}

RunReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_report(ss.str());
}

std::string curves_csv(const RunReport& r) {
  std::string out = "seed,stage,epoch,loss,diagnostic,valid_metric\n";
  for (const auto& s : r.per_seed)
    for (const auto& e : s.curve)
      out += std::to_string(s.seed) + "," + e.stage + "," + std::to_string(e.epoch) + "," + fmt17(e.loss) + "," +
             fmt17(e.diagnostic) + "," + fmt17(e.valid_metric) + "\n";
  return out;
}

void write_report(const RunReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
  };
  write("report.json", report_json(r));
  write("curves.csv", curves_csv(r));
  ojson timing;
  timing["wall_seconds"] = r.wall_seconds;
  ojson per = ojson::array();
  for (const auto& s : r.per_seed) per.push_back({{"seed", s.seed}, {"wall_seconds", s.wall_seconds}});
  timing["per_seed"] = per;
  write("timing.json", timing.dump(2) + "\n");
}

SeedResult run_seed(const PreparedData& data, const StageConfig& cfg, std::uint64_t seed,
                    const RunOptions& opts) {
  return cfg.precision == Precision::float64 ? run_seed_typed<double>(data, cfg, seed, opts)
                                             : run_seed_typed<float>(data, cfg, seed, opts);
}

RunReport run_rsvp(const PreparedData& data, const StageConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  RunReport r;
  r.variant = opts.variant;
  r.config = cfg;
  std::vector<Metrics> valid, test;
  for (const auto seed : cfg.seeds) {
    logger().info("{}: seed {}", opts.variant, seed);
    r.per_seed.push_back(run_seed(data, cfg, seed, opts));
    valid.push_back(r.per_seed.back().valid);
    test.push_back(r.per_seed.back().test);
    r.wall_seconds += r.per_seed.back().wall_seconds;
  }
  r.mean_valid = mean_metrics(valid);
  r.mean_test = mean_metrics(test);
  return r;
}

RunReport run_rsvp(std::span<const text::DialogueRecord> records, const StageConfig& cfg,
                   const RunOptions& opts) {
  const auto data = prepare_data(records, cfg);
  return run_rsvp(data, cfg, opts);
}

StageConfig baseline_config(StageConfig cfg, bool with_uns_cl) {
  cfg.use_retrieval = false;
  cfg.use_generation = false;
  cfg.use_uns_cl = with_uns_cl;
  if (!with_uns_cl) cfg.lambda = 0;
  return cfg;
}

RunReport run_baseline_classifier(const PreparedData& data, const StageConfig& cfg, bool with_uns_cl,
                                  RunOptions opts) {
  if (opts.variant == "rsvp") opts.variant = with_uns_cl ? "baseline+uns_cl" : "baseline";
  return run_rsvp(data, baseline_config(cfg, with_uns_cl), opts);
}

RunReport run_baseline_classifier(std::span<const text::DialogueRecord> records, const StageConfig& cfg,
                                  bool with_uns_cl, RunOptions opts) {
  const auto data = prepare_data(records, cfg);
  return run_baseline_classifier(data, cfg, with_uns_cl, std::move(opts));
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"full", "no_retrieval", "no_generation", "reverse_order", "no_uns_cl"};
  return v;
}

StageConfig ablation_config(StageConfig cfg, std::string_view variant) {
  if (variant == "full") return cfg;
  if (variant == "no_retrieval") cfg.use_retrieval = false;
  else if (variant == "no_generation") cfg.use_generation = false;
  else if (variant == "reverse_order")
    cfg.task_order = cfg.task_order == TaskOrder::retrieval_first ? TaskOrder::generation_first
                                                                   : TaskOrder::retrieval_first;
  else if (variant == "no_uns_cl") cfg.use_uns_cl = false;
  else throw std::invalid_argument("unknown ablation variant '" + std::string(variant) + "'");
  return cfg;
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "batch_n") return SweepAxis::batch_n;
  if (name == "lambda") return SweepAxis::lambda;
  if (name == "variant") return SweepAxis::variant;
  throw std::invalid_argument("unknown sweep axis '" + std::string(name) + "' (batch_n, lambda, variant)");
}

std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::batch_n: return "batch_n";
    case SweepAxis::lambda: return "lambda";
    case SweepAxis::variant: return "variant";
  }
  return "?";
}

std::vector<std::string> sweep_values(SweepAxis a) {
  switch (a) {
    case SweepAxis::batch_n: return {"4", "8", "12", "16"};
    case SweepAxis::lambda: return {"0.2", "0.4", "0.6", "0.8"};
    case SweepAxis::variant: return ablation_variants();
  }
  return {};
}

StageConfig sweep_config(StageConfig cfg, SweepAxis a, std::string_view value) {
  switch (a) {
    case SweepAxis::batch_n: set_value(cfg, "pretrain_batch", value); break;
    case SweepAxis::lambda: set_value(cfg, "lambda", value); break;
    case SweepAxis::variant: cfg = ablation_config(cfg, value); break;
  }
  cfg.validate();
  return cfg;
}

GridRow grid_row(SweepAxis axis, std::string_view value, const RunReport& r) {
  GridRow row{std::string(to_string(axis)), std::string(value), {}, r.mean_test};
  for (const auto& s : r.per_seed) row.seeds.push_back(s.seed);
  return row;
}

SweepResult run_sweep(const PreparedData& data, const StageConfig& cfg, SweepAxis axis,
                      const RunOptions& opts) {
  SweepResult out;
  out.axis = axis;
  for (const auto& value : sweep_values(axis)) {
    RunOptions cell = opts;
    cell.variant = std::string(to_string(axis)) + "=" + value;
    if (opts.checkpoint_dir) cell.checkpoint_dir = *opts.checkpoint_dir / cell.variant;
    out.reports.push_back(run_rsvp(data, sweep_config(cfg, axis, value), cell));
    out.rows.push_back(grid_row(axis, value, out.reports.back()));
  }
  return out;
}

std::string grid_csv(std::span<const GridRow> rows) {
  std::string out = "axis,value,seeds";
  if (!rows.empty())
    for (const auto& [k, v] : rows.front().mean_test) out += "," + k;
  out += "\n";
  for (const auto& row : rows) {
    if (row.mean_test.size() != rows.front().mean_test.size())
      throw std::invalid_argument("grid rows carry different metric sets");
    std::string seeds;
    for (std::size_t i = 0; i < row.seeds.size(); ++i) seeds += (i ? ";" : "") + std::to_string(row.seeds[i]);
    out += row.axis + "," + row.value + "," + seeds;
    for (const auto& [k, v] : row.mean_test) out += "," + fmt17(v);
    out += "\n";
  }
  return out;
}

void write_grid_csv(const std::filesystem::path& path, std::span<const GridRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << grid_csv(rows);
}

std::vector<GridRow> parse_grid_csv(std::string_view content) {
  std::vector<GridRow> rows;
  std::vector<std::string> header;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    const auto line = content.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (header.empty()) {
      if (cells.size() < 3 || cells[0] != "axis" || cells[1] != "value" || cells[2] != "seeds")
        throw ParseError("grid header must start with axis,value,seeds", lineno);
      header = cells;
      continue;
    }
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()),
                       lineno);
    GridRow row{cells[0], cells[1], {}, {}};
    std::string_view seeds = cells[2];
    while (!seeds.empty()) {
      const auto cut = seeds.find(';');
      row.seeds.push_back(std::stoull(std::string(seeds.substr(0, cut))));
      seeds = cut == std::string_view::npos ? std::string_view{} : seeds.substr(cut + 1);
    }
    try {
      for (std::size_t i = 3; i < cells.size(); ++i) row.mean_test.emplace_back(header[i], parse_double(cells[i]));
    } catch (const std::exception& e) {
      throw ParseError(e.what(), lineno);
    }
    rows.push_back(std::move(row));
  }
  if (header.empty()) throw ParseError("empty grid", 0);
  return rows;
}

std::vector<GridRow> load_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open grid " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_grid_csv(ss.str());
}

}  // namespace rsvp::train

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsvp/trainer/config.hpp"
#include "rsvp/trainer/trainer.hpp"

namespace rsvp::train {

struct SeedResult {
  std::uint64_t seed = 0;
  Metrics train;
  Metrics valid;
  Metrics test;
  std::size_t selected_epoch = 0;
  std::vector<EpochRecord> curve;
  double wall_seconds = 0;  // kept out of report.json
};

struct RunReport {
  std::string variant;
  StageConfig config;
  std::vector<SeedResult> per_seed;
  // Arithmetic means over per_seed, same key order.
  Metrics mean_valid;
  Metrics mean_test;
  double wall_seconds = 0;
};

Metrics mean_metrics(std::span<const Metrics> rows);

// Deterministic JSON (no wall-clock). Curves and wall time are not read back.
std::string report_json(const RunReport& r);
RunReport parse_report(std::string_view text);
RunReport load_report(const std::filesystem::path& path);

// Writes report.json, curves.csv and timing.json into dir.
void write_report(const RunReport& r, const std::filesystem::path& dir);
std::string curves_csv(const RunReport& r);

struct RunOptions {
  std::string variant = "rsvp";
  // Per-seed finetuned checkpoints land here as seed-<s>.ckpt when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Called with (seed, record); returning false ends that stage early.
  std::function<bool(std::uint64_t, const EpochRecord&)> callback;
};

// One seed: pre-training per the stage flags, then fine-tuning.
SeedResult run_seed(const PreparedData& data, const StageConfig& cfg, std::uint64_t seed,
                    const RunOptions& opts = {});

RunReport run_rsvp(std::span<const text::DialogueRecord> records, const StageConfig& cfg,
                   const RunOptions& opts = {});
RunReport run_rsvp(const PreparedData& data, const StageConfig& cfg, const RunOptions& opts = {});

// Both pre-training stages off; lambda forced to 0 without the
// unsupervised term.
StageConfig baseline_config(StageConfig cfg, bool with_uns_cl);
RunReport run_baseline_classifier(std::span<const text::DialogueRecord> records, const StageConfig& cfg,
                                  bool with_uns_cl, RunOptions opts = {});
RunReport run_baseline_classifier(const PreparedData& data, const StageConfig& cfg, bool with_uns_cl,
                                  RunOptions opts = {});

// full, no_retrieval, no_generation, reverse_order, no_uns_cl
const std::vector<std::string>& ablation_variants();
StageConfig ablation_config(StageConfig cfg, std::string_view variant);

enum class SweepAxis { batch_n, lambda, variant };
SweepAxis parse_sweep_axis(std::string_view name);
std::string_view to_string(SweepAxis a);
std::vector<std::string> sweep_values(SweepAxis a);
StageConfig sweep_config(StageConfig cfg, SweepAxis a, std::string_view value);

// One CSV row: mean metrics for one cell.
struct GridRow {
  std::string axis;
  std::string value;
  std::vector<std::uint64_t> seeds;
  Metrics mean_test;
  bool operator==(const GridRow&) const = default;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::batch_n;
  std::vector<RunReport> reports;
  std::vector<GridRow> rows;
};

SweepResult run_sweep(const PreparedData& data, const StageConfig& cfg, SweepAxis axis,
                      const RunOptions& opts = {});
GridRow grid_row(SweepAxis axis, std::string_view value, const RunReport& r);

// Columns: axis,value,seeds,<metric>... with seeds joined by ';'.
std::string grid_csv(std::span<const GridRow> rows);
void write_grid_csv(const std::filesystem::path& path, std::span<const GridRow> rows);
std::vector<GridRow> parse_grid_csv(std::string_view content);
std::vector<GridRow> load_grid_csv(const std::filesystem::path& path);

}  // namespace rsvp::train

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rsvp/cli/gen_data.hpp"
#include "rsvp/numerics/optim.hpp"
#include "rsvp/trainer/config.hpp"

namespace rsvp::testing {

// Small enough that a full pipeline runs in well under a second.
inline train::StageConfig tiny_stage_config() {
  train::StageConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.pooled_dim = 16;
  c.max_len = 32;
  c.lr = 2e-3;
  c.tau = 0.3;
  c.retrieval_epochs = 2;
  c.generation_epochs = 2;
  c.finetune_epochs = 3;
  c.pretrain_batch = 8;
  c.finetune_batch = 8;
  c.seeds = {3};
  return c;
}

inline std::vector<text::DialogueRecord> tiny_records(std::size_t intents = 4, std::size_t per_intent = 10,
                                                      std::uint64_t seed = 7) {
  cli::GenDataOptions g;
  g.n_intents = intents;
  g.n_per_intent = per_intent;
  g.seed = seed;
  return cli::gen_data(g);
}

template <typename T>
std::vector<std::vector<T>> snapshot(const std::vector<num::Parameter<T>*>& params) {
  std::vector<std::vector<T>> out;
  for (const auto* p : params) out.emplace_back(p->tensor().data().begin(), p->tensor().data().end());
  return out;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rsvp-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace rsvp::testing

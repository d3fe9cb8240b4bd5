#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rsvp::cli {

// Subcommands: gen-data, build-vocab, pretrain-retrieval, pretrain-generation,
// finetune, run-rsvp, run-baseline, sweep, evaluate, predict,
// export-embeddings. Returns the process exit code; diagnostics go to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace rsvp::cli

#include "rsvp/cli/cli.hpp"

int main(int argc, char** argv) { return rsvp::cli::run_cli(argc, argv); }

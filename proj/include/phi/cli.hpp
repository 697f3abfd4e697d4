#pragma once

#include <string>
#include <vector>

namespace phi {

// Parsed command line: one command per process, config file plus repeated
// key=value overrides, and the output directory every artifact lands in.
struct CliConfig {
  std::string command;                 // gen-data | train | eval | verify |
                                       // bench | md | hyper-search
  std::string config_path;             // optional `key = value` file
  std::vector<std::string> overrides;  // repeated --set key=value, in order
  std::string out_dir;                 // default $PHI_OUT_DIR, else ./out
};

// Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.
int run_command(const CliConfig& cli);
int dispatch(int argc, const char* const* argv);

}  // namespace phi

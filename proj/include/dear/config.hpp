#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dear/trainer.hpp"

namespace CLI {
class App;
}

namespace dear {

struct RunConfig {
  TrainConfig train;
  std::string data_dir;
  std::string out_dir;
  std::string tag;
};

// Raw tokens of the list-valued options, resolved by finalize_run_config.
struct ListOptions {
  std::vector<std::string> edges;
  std::vector<std::string> causal_order;
};

// Registers --config plus one flag per RunConfig field. Config files use flat
// TOML keys named like the flags (lambda = 5, edges = [[1,3],[2,3]]).
// Unknown keys are rejected.
void add_run_options(CLI::App& app, RunConfig& config, ListOptions& lists);

// Applies the list options and validates the result.
void finalize_run_config(RunConfig& config, const ListOptions& lists);

// defaults <- file <- overrides (flag strings such as "--lambda", "10").
// An empty path skips the file. Throws ConfigError naming the offending key.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Accepts "i->j" items or a flat sequence of integers read as pairs.
std::vector<std::pair<int, int>> parse_edges(const std::vector<std::string>& tokens);
std::vector<int> parse_order(const std::vector<std::string>& tokens);
std::string format_edge(const std::pair<int, int>& edge);

// Deterministic TOML rendering that load_config reads back unchanged.
std::string to_toml(const RunConfig& config);
void write_resolved_config(const RunConfig& config, const std::filesystem::path& out_dir);

}  // namespace dear

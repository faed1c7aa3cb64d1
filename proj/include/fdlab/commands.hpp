#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fdlab/config.hpp"
#include "fdlab/trainer.hpp"

namespace fdlab {

inline constexpr const char* kDataDirEnv = "FDLAB_DATA_DIR";

/// Data directory for `cfg`: the configured one (relative paths resolve
/// against `config_dir`), else $FDLAB_DATA_DIR. Throws when neither is set.
std::filesystem::path resolve_data_dir(const std::filesystem::path& configured, const std::filesystem::path& config_dir);

struct TrainCommand {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  bool verbose = false;
};

/// Loads the config, writes resolved_config.ini, trains into `out`.
TrainResult cmd_train(const TrainCommand& cmd, std::ostream& log);

struct EvalCommand {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;  ///< empty: $FDLAB_DATA_DIR
  std::string split = "valid";
  std::size_t mc = 0;              ///< 0: mask-free evaluation
  std::uint64_t mc_seed = 1;
  std::size_t batch = 10;
  std::size_t bptt = 35;
};

/// Prints a summary line and, last, `ppl=<value>`; returns the perplexity.
double cmd_eval(const EvalCommand& cmd, std::ostream& out);

struct GridCommand {
  std::filesystem::path config;
  std::filesystem::path out;
  std::size_t parallel = 1;
  std::optional<double> baseline;  ///< overrides grid.baseline
};

struct GridRunRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double best_val_ppl = 0.0;
  std::string error;  ///< non-empty when the run failed
};

struct GridOutcome {
  std::vector<GridRunRecord> runs;
  GridSummary summary;
  bool all_succeeded() const;
};

/// Runs every grid member in its own out/run_NNN directory, up to `parallel`
/// at a time, then writes summary.csv and prints the summary table.
GridOutcome cmd_grid(const GridCommand& cmd, std::ostream& out);

}  // namespace fdlab

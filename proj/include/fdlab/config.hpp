#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fdlab/data.hpp"
#include "fdlab/rng.hpp"
#include "fdlab/trainer.hpp"

namespace fdlab {

/// Everything a run needs: the training configuration plus where the corpus lives.
struct ExperimentConfig {
  RunConfig run;
  std::filesystem::path data_dir;  ///< empty: taken from FDLAB_DATA_DIR by the CLI
  TokenMode mode = TokenMode::word;
};

/// Flat "section.key" -> value view of an INI file.
using KeyValues = std::map<std::string, std::string>;

/// Parses INI text; duplicate keys are an error.
KeyValues read_ini(const std::string& text);
KeyValues read_ini_file(const std::filesystem::path& path);

/// Every recognized "section.key", in rendering order.
const std::vector<std::string>& config_keys();

/// Applies `values` over the defaults. Unknown sections or keys, and values
/// that do not parse, raise FormatError naming the key.
ExperimentConfig config_from_values(const KeyValues& values);
ExperimentConfig load_config(const std::filesystem::path& path);

/// The fully resolved configuration as INI text (round-trips through load).
std::string render_config(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Random search.

/// "{a,b,c}" draws one member with equal probability; "U(a,b)" draws
/// uniformly from the interval (integers when both bounds are integers).
struct RangeSpec {
  enum class Kind { set, uniform } kind = Kind::set;
  std::vector<std::string> members;
  double lo = 0.0, hi = 0.0;
  bool integer = false;
};

/// nullopt for a plain value; FormatError for malformed range syntax.
std::optional<RangeSpec> parse_range(const std::string& text);
std::string draw(const RangeSpec& range, Rng& rng);

struct GridSpec {
  std::size_t runs = 1;
  std::uint64_t seed = 1;
  std::optional<double> baseline;          ///< perplexity to beat, supplied by the user
  std::optional<RangeSpec> dropout_scale;   ///< multiplies every dropout rate of a run
  KeyValues base;                           ///< values and ranges for the ordinary sections
};

/// A config file with an extra [grid] section (runs, seed, baseline,
/// dropout_scale); any ordinary key may hold a range.
GridSpec parse_grid(const KeyValues& values);
GridSpec load_grid(const std::filesystem::path& path);

/// Concrete configuration of grid run `index`.
ExperimentConfig grid_run(const GridSpec& grid, std::size_t index);

struct GridSummary {
  std::size_t runs = 0;
  double best = 0.0;
  double top5_mean = 0.0;
  double top10_mean = 0.0;
  std::optional<std::size_t> beating_baseline;  ///< runs with perplexity below the baseline
};

GridSummary summarize_grid(std::vector<double> perplexities, std::optional<double> baseline);

}  // namespace fdlab

#pragma once

#include <cstdint>
#include <filesystem>

#include "fdlab/data.hpp"
#include "fdlab/rnn_lm.hpp"

namespace fdlab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  LmModel model;
  TokenMode mode = TokenMode::word;
};

/// Little-endian layout:
///   "FDLMCKPT", u32 version,
///   u64 vocab, u64 embed, u64 hidden, u64 layers, u8 tied, u8 token mode,
///   5 x (f64 rate, u8 granularity) for embedding, input, hidden, output, weight,
///   u32 parameter count, then per parameter:
///   u32 name length, name bytes, u32 rank, rank x u64 dims, f64 data.
void save_checkpoint(const std::filesystem::path& path, const LmModel& model, TokenMode mode);
/// Throws FormatError on a bad magic, version, truncation or inconsistent shapes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fdlab

#pragma once

#include <filesystem>
#include <string>

#include "sctrans/model.hpp"

namespace sct {

/// Single-file container:
///   magic "SCTCKPT1", u32 version, u64 config length, config text,
///   u32 entry count, then per entry: u32 name length, name, u8 dtype (0 = f32, 1 = f64),
///   u32 rank, u64 dims[rank], u64 payload offset, u64 payload bytes;
///   u64 payload length, payload (raw little-endian values).
/// Integers are little-endian. Every tensor in the store is written, including buffers.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const SCTransNet<T>& model, const std::filesystem::path& path);

/// Embedded model configuration text.
std::string read_checkpoint_config(const std::filesystem::path& path);

/// Replaces every tensor in `model` from the file. The file is fully validated before any
/// tensor is touched; a CheckpointError lists missing and unexpected names on mismatch.
template <typename T>
void load_parameters(SCTransNet<T>& model, const std::filesystem::path& path);

/// Builds a model from the embedded configuration and loads its tensors.
template <typename T>
SCTransNet<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace sct

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "pathlab/gpt.hpp"

namespace pathlab {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::int64_t step = 0;
};

template <class T>
struct Checkpoint {
  GptParams<T> params;
  CheckpointMeta meta;
};

// Text manifest (format version, dtype, config, meta, one line per tensor, payload
// checksum) followed by the raw little-endian tensor payload in for_each order.
template <class T>
void save_checkpoint(const GptParams<T>& params, const std::filesystem::path& path,
                     const CheckpointMeta& meta = {});

// Accepts either stored precision; f32 -> f64 widening is exact. Rejects bad magic,
// shape mismatches against the stored config, short payloads and checksum failures.
template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// FNV-1a over bytes, used for the payload checksum and for comparing runs.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace pathlab

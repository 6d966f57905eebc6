#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "iste/param_store.hpp"

namespace iste::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& text);

/// Hex rendering used for hashes in reports and HTTP headers.
std::string hash_hex(std::uint64_t h);

template <typename T>
struct Checkpoint {
    ParamStore<T> params;
    std::string config_json;
    std::uint64_t config_hash = 0;
};

/// Layout (little-endian):
///   "ISTE" | u32 version | u64 config hash | u8 scalar bytes | u64 rng seed
///   | u32 len + config json | u32 entry count
///   | per entry: u32 len + name, u32 rank, u64 extents..., raw values
///   | u64 FNV-1a of everything before it
template <typename T>
void save_checkpoint(const ParamStore<T>& params, const std::filesystem::path& path, const std::string& config_json,
                     std::uint64_t config_hash);

/// Throws CheckpointError on bad magic, version, checksum, precision, or
/// when `expected_hash` is given and differs from the stored hash.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path,
                              std::optional<std::uint64_t> expected_hash = std::nullopt);

/// Hash of the whole file contents, used to tag evaluation reports.
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace iste::nn

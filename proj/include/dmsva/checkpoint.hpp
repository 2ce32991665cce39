#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmsva/model.hpp"
#include "dmsva/trainer.hpp"

namespace dmsva::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers and doubles little-endian:
///
///   "DMSV"  u32 version  u32 N  u32 D
///   banks pk, ek, tv, sv        (4 * N * D f64, row-major)
///   optimizer m, v              (2 * 4 * N * D f64, same order as the banks)
///   u64 optimizer step
///   EMA shadow banks            (4 * N * D f64)
///   u64 training step
///   u32 config length, config snapshot (JSON text)
///   u32 CRC32 of every preceding byte
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    DmsvaModel model;
    TrainerState state;
    nlohmann::json config = nlohmann::json::object();

    bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws CorruptFile on truncation or checksum failure, VersionMismatch on an
/// unknown version.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace dmsva::train

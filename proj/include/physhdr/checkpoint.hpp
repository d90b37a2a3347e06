#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>

#include "json.hpp"
#include "physhdr/model.hpp"

/// Checkpoint container:
///
///   bytes 0-3   magic "PHCK"
///   bytes 4-7   format version, uint32 little endian
///   bytes 8-15  header length L, uint64 little endian
///   L bytes     UTF-8 JSON header
///   rest        float64 little-endian payload
///
/// The header holds the model config, the E-bar checksum, free-form run
/// metadata, and for every parameter (and optimizer moment) its name, shape
/// and element offset into the payload. Values are stored bit-exact.
namespace physhdr::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

struct OptimizerState {
    nn::AdamWConfig config;
    std::int64_t steps = 0;
    std::map<std::string, nn::AdamW::Moments> moments;
};

struct Contents {
    std::unique_ptr<PhysHdrModel> model;
    std::optional<OptimizerState> optimizer;
    nlohmann::json meta;
    std::uint64_t ldr_encoder_checksum = 0;
};

/// Writes to a temporary sibling and renames it into place.
void save(const std::filesystem::path& path, const PhysHdrModel& model, const nn::AdamW* opt,
          const nlohmann::json& meta = nlohmann::json::object());

/// Throws IoError if unreadable, CheckpointError on a bad container,
/// missing or misshapen parameters, or an E-bar checksum mismatch.
Contents load(const std::filesystem::path& path);

/// Restores moments and step count into an optimizer built over the same parameters.
void restore(nn::AdamW& opt, const OptimizerState& state);

} // namespace physhdr::checkpoint

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vesselgan/networks.hpp"
#include "vesselgan/tensor.hpp"

namespace vgan {

/// Versioned named-array container: 8-byte magic, little-endian u64 JSON
/// length, JSON metadata, then the arrays' doubles concatenated in metadata
/// order. The metadata records shapes and an FNV-1a hash of the payload.
struct Container {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> arrays;

    const Tensor* find(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[] = "VGANCKP1";
inline constexpr char kWeightsMagic[] = "VGANWGT1";
inline constexpr char kArraysMagic[] = "VGANARR1";

void save_container(const std::filesystem::path& path, const char* magic8,
                    nlohmann::json extra_meta,
                    const std::vector<std::pair<std::string, const Tensor*>>& arrays);

/// Throws WeightsFormatError on structural problems and ChecksumError when
/// the payload hash does not match the manifest.
Container load_container(const std::filesystem::path& path, const char* magic8);

struct LoadedCheckpoint {
    std::unique_ptr<Network> network;
    std::int64_t step = 0;
};

/// Writes spec (as JSON), a hash of that spec, the training step counter and
/// every named parameter/buffer array.
void save_checkpoint(Network& network, std::int64_t step, const std::filesystem::path& path);

/// Rebuilds the network from the stored spec. Rejects checkpoints whose
/// stored spec hash does not match the stored spec (ChecksumError) and
/// checkpoints missing arrays or with mismatched shapes (WeightsFormatError).
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vgan

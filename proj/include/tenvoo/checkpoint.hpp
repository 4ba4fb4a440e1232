#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "tenvoo/config.hpp"
#include "tenvoo/nn.hpp"
#include "tenvoo/optim.hpp"

namespace tenvoo {

struct CheckpointMeta {
    std::int64_t step = 0;
    std::uint64_t model_seed = 0;
    bool has_adapters = false;
    AdapterConfig adapter;  // attach-time arguments, meaningful when has_adapters
    std::uint64_t adapter_seed = 0;
};

struct Checkpoint {
    ExperimentConfig config;
    CheckpointMeta meta;
    std::uint64_t config_hash = 0;
    std::unique_ptr<UNetLite> model;
    std::unique_ptr<AdamOptimizer> adam;  // null when no optimizer state was saved
};

// Single binary container: magic "TVOOCKPT", u32 version, u32 JSON index
// length, the index (embedded config, adapter topologies, blob offsets,
// optimizer metadata), then little-endian f64 blobs. Payloads stay f64 so
// load(save(x)) reproduces forward outputs bit-exactly.
//
// The loader rebuilds the model from the embedded config, re-attaches
// adapters with the saved arguments and seed (which replays the frozen
// snapshots bit-exactly), then overwrites every parameter and each adapter's
// frozen contraction from the blobs.
void save_checkpoint(const std::string& path, const UNetLite& model, const ExperimentConfig& cfg,
                     const CheckpointMeta& meta, const AdamOptimizer* adam = nullptr);

Checkpoint load_checkpoint(const std::string& path);

// Human-readable summary: step, config hash, parameter counts, adapter info.
std::string inspect_checkpoint(const std::string& path);

}  // namespace tenvoo

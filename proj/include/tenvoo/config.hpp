#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tenvoo/adapters.hpp"
#include "tenvoo/nn.hpp"
#include "tenvoo/phantom.hpp"

namespace tenvoo {

struct DiffusionConfig {
    std::int64_t timesteps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct AdapterConfig {
    AdapterKind kind = AdapterKind::TenvooL;
    std::int64_t rank = 4;
    double scaling = 1.0;
    bool joint_mode = false;
};

struct TrainingConfig {
    double lr = 5e-5;
    std::int64_t accumulation_steps = 4;
    std::int64_t max_steps = 200;
    std::uint64_t seed = 1234;
    std::string optimizer = "adam";  // "adam" or "sgd"
};

struct SamplingConfig {
    std::int64_t count = 4;
    bool deterministic = false;
};

struct TagDataset {
    PhantomConfig phantom;  // tag field mirrors the map key
    std::int64_t count = 16;
};

struct DataConfig {
    double split_fraction = 0.9;
    std::string pretrain_tag = "pretrain";
    std::string finetune_tag = "shiftA";
    std::map<std::string, TagDataset> tags;  // key is the dataset tag string
};

struct ExperimentConfig {
    UNetConfig model;
    DiffusionConfig diffusion;
    AdapterConfig adapter;
    TrainingConfig training;
    SamplingConfig sampling;
    DataConfig data;
    std::string out_dir = "out";
};

// Defaults with pretrain + shiftA datasets on a 32^3 grid.
ExperimentConfig default_config();

// Strict JSON parsing: unknown keys anywhere are rejected, present fields are
// type- and range-checked with the offending path in the message. Missing
// fields keep their defaults. load_config additionally applies the TENVOO_OUT
// environment override to out_dir.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical JSON dump (sorted keys); equal configs produce equal strings.
std::string config_to_json(const ExperimentConfig& cfg);

// FNV-1a over the canonical dump.
std::uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace tenvoo

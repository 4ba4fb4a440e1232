#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tenvoo/config.hpp"

namespace tenvoo {

// Experiment commands behind the CLI verbs. Every command is deterministic
// given (config, seeds) and throws on error; artifacts land under
// cfg.out_dir. No wall-clock values are written into artifacts, so reruns
// are byte-identical.

struct GenDataResult {
    std::string manifest_path;
    std::int64_t files_written = 0;
};

// Writes count volumes per configured tag to <out>/data/<tag>/ plus
// <out>/data/manifest.json listing relative paths and seeds.
GenDataResult cmd_gen_data(const ExperimentConfig& cfg);

struct TrainResult {
    std::string checkpoint_path;
    std::string loss_csv_path;
    std::string summary_path;
    double first_window_mean = 0.0;  // mean loss of the first smoothing window
    double last_window_mean = 0.0;   // mean loss of the last smoothing window
    double final_loss = 0.0;
    std::int64_t steps = 0;
    std::int64_t trainable_params = 0;
    std::int64_t total_params = 0;
};

// Trains the base denoiser on the pretrain-tag training split; emits
// <out>/pretrain/{checkpoint.ckpt, loss.csv, summary.json}.
TrainResult cmd_pretrain(const ExperimentConfig& cfg);

// Attaches adapters per cfg.adapter on top of a base checkpoint (default
// <out>/pretrain/checkpoint.ckpt) and trains on the finetune-tag split; in
// adapter mode asserts at save time that base weights are byte-identical.
TrainResult cmd_finetune(const ExperimentConfig& cfg, const std::string& base_checkpoint = "");

struct SampleResult {
    std::vector<std::string> paths;
};

// Draws n volumes with seeds seed..seed+n-1 into <out>/samples/. With
// merged=true adapter deltas are folded into the base kernels first; the
// outputs match the adapter-path volumes within float tolerance.
SampleResult cmd_sample(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                        std::int64_t n, std::uint64_t seed, bool merged = false);

struct EvalResult {
    std::string report_json_path;
    std::string report_csv_path;
    std::string protocol;
    int scales = 3;
    double ms_ssim = 0.0;
    double mmd_biased = 0.0;
    double mmd_unbiased = 0.0;
    double bandwidth = 0.0;
    double nearest_mse = 0.0;
    std::int64_t n_real = 0;
    std::int64_t n_gen = 0;
};

// Compares two directories of .vol files. protocol: "pairwise" scores
// diversity among generated volumes; "nearest" scores each generated volume
// against its best real match. Writes <out>/eval/report.{json,csv}.
EvalResult cmd_eval(const ExperimentConfig& cfg, const std::string& real_dir,
                    const std::string& gen_dir, const std::string& protocol);

struct AblateRow {
    std::int64_t rank = 0;
    std::int64_t n_params = 0;  // adapter core entries across all adapted layers
    double ms_ssim = 0.0;
    double mmd = 0.0;
    double loss = 0.0;
};

struct AblateResult {
    std::string csv_path;
    std::vector<AblateRow> rows;
};

// For each rank: attach on a fresh copy of the base checkpoint, fine-tune,
// sample, evaluate; emits <out>/ablate/ablate.csv with one row per rank.
AblateResult cmd_ablate_rank(const ExperimentConfig& cfg, const std::vector<std::int64_t>& ranks,
                             const std::string& base_checkpoint = "");

// Adapter parameter-count table for the configured model, no training.
std::string cmd_param_count(const ExperimentConfig& cfg);

}  // namespace tenvoo

#include <cstdint>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tenvoo/checkpoint.hpp"
#include "tenvoo/config.hpp"
#include "tenvoo/runner.hpp"
#include "tenvoo/threading.hpp"

namespace {

void print_train_result(const char* mode, const tenvoo::TrainResult& r) {
    std::cout << mode << ": " << r.steps << " steps, final loss " << r.final_loss
              << ", window means " << r.first_window_mean << " -> " << r.last_window_mean << "\n"
              << "trainable params " << r.trainable_params << " / " << r.total_params << "\n"
              << "checkpoint: " << r.checkpoint_path << "\n"
              << "loss curve: " << r.loss_csv_path << "\n"
              << "summary: " << r.summary_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tensor-network adapter fine-tuning for 3D diffusion denoisers"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    int threads = 0;
    app.add_option("--config", config_path, "experiment config JSON; omitted keys use defaults");
    app.add_option("--out", out_override, "override the output directory");
    auto* global_seed = app.add_option("--seed", seed_override, "override training.seed");
    app.add_option("--threads", threads, "worker thread count (default: hardware)");

    auto* gen = app.add_subcommand("gen-data", "write phantom volumes and a manifest");

    auto* pre = app.add_subcommand("pretrain", "train the base denoiser from scratch");

    std::string base_ckpt;
    auto* fin = app.add_subcommand("finetune", "attach adapters to a base checkpoint and train");
    fin->add_option("--base", base_ckpt, "base checkpoint (default <out>/pretrain/checkpoint.ckpt)");

    std::int64_t sample_n = -1;
    std::uint64_t sample_seed = 0;
    std::string sample_ckpt;
    bool merged = false;
    auto* smp = app.add_subcommand("sample", "draw volumes from a checkpoint");
    smp->add_option("-n,--count", sample_n, "number of volumes (default sampling.count)");
    auto* smp_seed = smp->add_option("--seed", sample_seed, "first volume seed (default training.seed)");
    smp->add_option("--checkpoint", sample_ckpt, "checkpoint (default <out>/finetune/checkpoint.ckpt)");
    smp->add_flag("--merged", merged, "fold adapter deltas into the base kernels before sampling");

    std::string real_dir, gen_dir, protocol = "pairwise";
    auto* evl = app.add_subcommand("eval", "compare two directories of volumes");
    evl->add_option("--real", real_dir, "directory of reference volumes")->required();
    evl->add_option("--gen", gen_dir, "directory of generated volumes")->required();
    evl->add_option("--protocol", protocol, "MS-SSIM protocol: pairwise | nearest");

    std::vector<std::int64_t> ranks{1, 2, 4, 6};
    std::string ablate_base;
    auto* abl = app.add_subcommand("ablate-rank", "fine-tune at several ranks and tabulate metrics");
    abl->add_option("--ranks", ranks, "ranks to sweep");
    abl->add_option("--base", ablate_base, "base checkpoint (default <out>/pretrain/checkpoint.ckpt)");

    auto* cnt = app.add_subcommand("param-count", "print adapter parameter-count tables");

    std::string inspect_path;
    auto* ins = app.add_subcommand("inspect-checkpoint", "print a checkpoint summary");
    ins->add_option("path", inspect_path, "checkpoint file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads > 0) tenvoo::set_num_threads(threads);

        if (ins->parsed()) {
            std::cout << tenvoo::inspect_checkpoint(inspect_path);
            return 0;
        }

        tenvoo::ExperimentConfig cfg;
        if (!config_path.empty()) {
            cfg = tenvoo::load_config(config_path);
        } else {
            cfg = tenvoo::default_config();
            if (const char* env = std::getenv("TENVOO_OUT"); env != nullptr && env[0] != '\0') {
                cfg.out_dir = env;
            }
        }
        if (global_seed->count() > 0) cfg.training.seed = seed_override;
        if (!out_override.empty()) cfg.out_dir = out_override;

        if (gen->parsed()) {
            const tenvoo::GenDataResult r = tenvoo::cmd_gen_data(cfg);
            std::cout << "wrote " << r.files_written << " volumes\nmanifest: " << r.manifest_path
                      << "\n";
        } else if (pre->parsed()) {
            print_train_result("pretrain", tenvoo::cmd_pretrain(cfg));
        } else if (fin->parsed()) {
            print_train_result("finetune", tenvoo::cmd_finetune(cfg, base_ckpt));
        } else if (smp->parsed()) {
            const std::int64_t n = sample_n > 0 ? sample_n : cfg.sampling.count;
            const std::uint64_t seed = smp_seed->count() > 0 ? sample_seed : cfg.training.seed;
            const tenvoo::SampleResult r = tenvoo::cmd_sample(cfg, sample_ckpt, n, seed, merged);
            for (const std::string& p : r.paths) std::cout << p << "\n";
        } else if (evl->parsed()) {
            const tenvoo::EvalResult r = tenvoo::cmd_eval(cfg, real_dir, gen_dir, protocol);
            std::cout << "ms_ssim (" << r.protocol << ", " << r.scales << " scales): " << r.ms_ssim
                      << "\nmmd biased: " << r.mmd_biased << "  unbiased: " << r.mmd_unbiased
                      << "  bandwidth: " << r.bandwidth << "\nnearest-real mse: " << r.nearest_mse
                      << "\nreport: " << r.report_json_path << "\n";
        } else if (abl->parsed()) {
            const tenvoo::AblateResult r = tenvoo::cmd_ablate_rank(cfg, ranks, ablate_base);
            std::cout << "rank  n_params  ms_ssim  mmd  loss\n";
            for (const tenvoo::AblateRow& row : r.rows) {
                std::cout << row.rank << "  " << row.n_params << "  " << row.ms_ssim << "  "
                          << row.mmd << "  " << row.loss << "\n";
            }
            std::cout << "table: " << r.csv_path << "\n";
        } else if (cnt->parsed()) {
            std::cout << tenvoo::cmd_param_count(cfg);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

#include "tenvoo/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "tenvoo/checkpoint.hpp"
#include "tenvoo/ddpm.hpp"
#include "tenvoo/metrics.hpp"
#include "tenvoo/rng.hpp"
#include "tenvoo/volume_io.hpp"

namespace tenvoo {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Seed streams derived from training.seed; the golden-ratio stride gives one
// independent stream per optimizer step so an interrupted run resumes
// bit-exactly.
constexpr std::uint64_t kStepStride = 0x9E3779B97F4A7C15ull;
constexpr std::uint64_t kSplitSalt = 424243;
constexpr std::uint64_t kAdapterSalt = 999331;
constexpr std::uint64_t kEncoderSeed = 1729;

std::string fmt_g(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

std::string checkpoint_default(const ExperimentConfig& cfg, const char* stage) {
    return (fs::path(cfg.out_dir) / stage / "checkpoint.ckpt").string();
}

std::vector<VolumeRecord> load_tag_volumes(const ExperimentConfig& cfg, const std::string& tag) {
    const fs::path manifest = fs::path(cfg.out_dir) / "data" / "manifest.json";
    if (!fs::exists(manifest)) {
        throw std::runtime_error("missing " + manifest.string() + "; run gen-data first");
    }
    std::ifstream f(manifest);
    json m;
    try {
        m = json::parse(f);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("malformed manifest " + manifest.string() + ": " + e.what());
    }
    if (!m.contains("tags") || !m.at("tags").contains(tag)) {
        throw std::runtime_error("tag \"" + tag + "\" not in manifest; add it to data.tags and rerun gen-data");
    }
    std::vector<VolumeRecord> out;
    for (const json& e : m.at("tags").at(tag)) {
        out.push_back(read_volume((fs::path(cfg.out_dir) / e.at("path").get<std::string>()).string()));
    }
    if (out.empty()) throw std::runtime_error("manifest lists no volumes for tag " + tag);
    return out;
}

// Training works on [-1,1]; volumes are stored in [0,1].
std::vector<Tensor> to_training_range(const std::vector<VolumeRecord>& recs) {
    std::vector<Tensor> out;
    out.reserve(recs.size());
    for (const VolumeRecord& r : recs) {
        Tensor t = r.voxels;
        for (double& v : t.data) v = 2.0 * v - 1.0;
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<Tensor> training_split(const ExperimentConfig& cfg, const std::string& tag) {
    auto [train, eval] = make_split(load_tag_volumes(cfg, tag), cfg.data.split_fraction,
                                    cfg.training.seed + kSplitSalt);
    if (train.empty()) throw std::runtime_error("training split for tag " + tag + " is empty");
    return to_training_range(train);
}

struct LoopStats {
    double first_window_mean = 0.0;
    double last_window_mean = 0.0;
    double final_loss = 0.0;
    std::int64_t window = 0;
};

LoopStats run_training_loop(UNetLite& model, const std::vector<Tensor>& train_vols,
                            const ExperimentConfig& cfg, const DiffusionSchedule& s,
                            AdamOptimizer* adam, const std::string& csv_path) {
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot open " + csv_path);
    csv << "step,loss,lr,grad_norm\n";

    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(cfg.training.max_steps));
    for (std::int64_t step = 1; step <= cfg.training.max_steps; ++step) {
        Rng rng(cfg.training.seed + kStepStride * static_cast<std::uint64_t>(step));
        std::vector<Tensor> batch;
        batch.reserve(static_cast<std::size_t>(cfg.training.accumulation_steps));
        for (std::int64_t a = 0; a < cfg.training.accumulation_steps; ++a) {
            batch.push_back(train_vols[static_cast<std::size_t>(
                rng.below(static_cast<std::uint64_t>(train_vols.size())))]);
        }
        const TrainStepResult r = adam != nullptr
                                      ? train_step(model, batch, s, rng, *adam)
                                      : train_step_sgd(model, batch, s, rng, cfg.training.lr);
        if (!std::isfinite(r.loss)) {
            throw std::runtime_error("training diverged: non-finite loss at step " +
                                     std::to_string(step) + "; lower training.lr or raise accumulation_steps");
        }
        csv << step << ',' << fmt_g(r.loss) << ',' << fmt_g(cfg.training.lr) << ','
            << fmt_g(r.grad_norm) << '\n';
        losses.push_back(r.loss);
    }
    csv.close();
    if (!csv) throw std::runtime_error("short write to " + csv_path);

    LoopStats st;
    const std::int64_t n = static_cast<std::int64_t>(losses.size());
    st.window = std::min<std::int64_t>(50, std::max<std::int64_t>(1, n / 2));
    for (std::int64_t i = 0; i < st.window; ++i) st.first_window_mean += losses[static_cast<std::size_t>(i)];
    for (std::int64_t i = n - st.window; i < n; ++i) st.last_window_mean += losses[static_cast<std::size_t>(i)];
    st.first_window_mean /= static_cast<double>(st.window);
    st.last_window_mean /= static_cast<double>(st.window);
    st.final_loss = losses.back();
    return st;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << text;
    if (!f.good()) throw std::runtime_error("short write to " + path);
}

json summary_common(const ExperimentConfig& cfg, const LoopStats& st, const TrainResult& r) {
    json j;
    j["steps"] = r.steps;
    j["final_loss"] = st.final_loss;
    j["first_window_mean"] = st.first_window_mean;
    j["last_window_mean"] = st.last_window_mean;
    j["window"] = st.window;
    j["trainable_params"] = r.trainable_params;
    j["total_params"] = r.total_params;
    j["config_hash"] = config_hash(cfg);
    j["checkpoint"] = r.checkpoint_path;
    return j;
}

VolumeRecord sample_record(UNetLite& model, const DiffusionSchedule& s, const PhantomConfig& grid,
                           DatasetTag tag, std::uint64_t seed, bool deterministic) {
    Tensor x = sample(model, s, {grid.d, grid.h, grid.w}, seed, deterministic);
    for (double& v : x.data) {
        v = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
        v = static_cast<double>(static_cast<float>(v));  // match stored f32 payloads
    }
    VolumeRecord rec;
    rec.voxels = std::move(x);
    rec.tag = tag;
    rec.seed = seed;
    return rec;
}

std::vector<Tensor> read_volume_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error(dir + " is not a directory");
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".vol") paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw std::runtime_error("no .vol files in " + dir);
    std::vector<Tensor> out;
    out.reserve(paths.size());
    for (const std::string& p : paths) out.push_back(read_volume(p).voxels);
    return out;
}

int pick_scales(const std::vector<Tensor>& a, const std::vector<Tensor>& b, int window) {
    std::int64_t min_extent = std::numeric_limits<std::int64_t>::max();
    for (const std::vector<Tensor>* set : {&a, &b}) {
        for (const Tensor& t : *set) {
            for (std::int64_t e : t.shape) min_extent = std::min(min_extent, e);
        }
    }
    int scales = 0;
    while (scales < 3 && window * (std::int64_t{1} << scales) <= min_extent) ++scales;
    if (scales == 0) {
        throw std::runtime_error("volumes too small for MS-SSIM: min extent " +
                                 std::to_string(min_extent) + " < window " + std::to_string(window));
    }
    return scales;
}

}  // namespace

GenDataResult cmd_gen_data(const ExperimentConfig& cfg) {
    const fs::path data_dir = fs::path(cfg.out_dir) / "data";
    json tags = json::object();
    GenDataResult res;
    for (const auto& [tag, ds] : cfg.data.tags) {
        const fs::path tag_dir = data_dir / tag;
        fs::create_directories(tag_dir);
        const std::uint64_t ordinal = static_cast<std::uint64_t>(tag_from_string(tag)) + 1;
        json entries = json::array();
        for (std::int64_t i = 0; i < ds.count; ++i) {
            const std::uint64_t seed =
                (ordinal << 32) + cfg.training.seed + static_cast<std::uint64_t>(i);
            char name[32];
            std::snprintf(name, sizeof name, "vol_%04lld.vol", static_cast<long long>(i));
            const fs::path rel = fs::path("data") / tag / name;
            write_volume((fs::path(cfg.out_dir) / rel).string(), generate_phantom(ds.phantom, seed));
            json e;
            e["path"] = rel.generic_string();
            e["seed"] = seed;
            entries.push_back(std::move(e));
            ++res.files_written;
        }
        tags[tag] = std::move(entries);
    }
    json manifest;
    manifest["tags"] = std::move(tags);
    manifest["config_hash"] = config_hash(cfg);
    res.manifest_path = (data_dir / "manifest.json").string();
    write_text(res.manifest_path, manifest.dump(2) + "\n");
    return res;
}

TrainResult cmd_pretrain(const ExperimentConfig& cfg) {
    const fs::path dir = fs::path(cfg.out_dir) / "pretrain";
    fs::create_directories(dir);
    const std::vector<Tensor> train_vols = training_split(cfg, cfg.data.pretrain_tag);

    UNetLite model(cfg.model, cfg.training.seed);
    const DiffusionSchedule s =
        make_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
    std::unique_ptr<AdamOptimizer> adam;
    if (cfg.training.optimizer == "adam") adam = std::make_unique<AdamOptimizer>(cfg.training.lr);

    TrainResult r;
    r.loss_csv_path = (dir / "loss.csv").string();
    const LoopStats st = run_training_loop(model, train_vols, cfg, s, adam.get(), r.loss_csv_path);

    r.checkpoint_path = (dir / "checkpoint.ckpt").string();
    CheckpointMeta meta;
    meta.step = cfg.training.max_steps;
    meta.model_seed = cfg.training.seed;
    save_checkpoint(r.checkpoint_path, model, cfg, meta, adam.get());

    r.steps = cfg.training.max_steps;
    r.first_window_mean = st.first_window_mean;
    r.last_window_mean = st.last_window_mean;
    r.final_loss = st.final_loss;
    r.trainable_params = model.params().count_trainable();
    r.total_params = model.params().count_total();

    json summary = summary_common(cfg, st, r);
    summary["mode"] = "pretrain";
    summary["dataset_tag"] = cfg.data.pretrain_tag;
    r.summary_path = (dir / "summary.json").string();
    write_text(r.summary_path, summary.dump(2) + "\n");
    return r;
}

TrainResult cmd_finetune(const ExperimentConfig& cfg, const std::string& base_checkpoint) {
    const fs::path dir = fs::path(cfg.out_dir) / "finetune";
    fs::create_directories(dir);
    const std::string base =
        base_checkpoint.empty() ? checkpoint_default(cfg, "pretrain") : base_checkpoint;
    Checkpoint ck = load_checkpoint(base);
    if (ck.meta.has_adapters) {
        throw std::runtime_error("finetune expects a base checkpoint without adapters: " + base);
    }
    UNetLite& model = *ck.model;

    const std::uint64_t adapter_seed = cfg.training.seed + kAdapterSalt;
    const AttachReport rep = model.attach_adapters(cfg.adapter.kind, cfg.adapter.rank,
                                                   cfg.adapter.joint_mode, adapter_seed,
                                                   cfg.adapter.scaling);

    // Snapshot for the freezing contract; compared bitwise at save time.
    std::vector<std::pair<std::string, std::vector<double>>> base_snapshot;
    if (!cfg.adapter.joint_mode) {
        for (const Parameter* p : model.params().all()) {
            if (p->name.rfind("adapter.", 0) != 0) base_snapshot.emplace_back(p->name, p->value.data);
        }
    }

    const std::vector<Tensor> train_vols = training_split(cfg, cfg.data.finetune_tag);
    const DiffusionSchedule s =
        make_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
    std::unique_ptr<AdamOptimizer> adam;
    if (cfg.training.optimizer == "adam") adam = std::make_unique<AdamOptimizer>(cfg.training.lr);

    TrainResult r;
    r.loss_csv_path = (dir / "loss.csv").string();
    const LoopStats st = run_training_loop(model, train_vols, cfg, s, adam.get(), r.loss_csv_path);

    if (!cfg.adapter.joint_mode) {
        for (const auto& [name, values] : base_snapshot) {
            if (model.params().get(name).value.data != values) {
                throw std::logic_error("freezing contract violated: base parameter " + name +
                                       " changed during adapter-mode fine-tuning");
            }
        }
    }

    r.checkpoint_path = (dir / "checkpoint.ckpt").string();
    CheckpointMeta meta;
    meta.step = cfg.training.max_steps;
    meta.model_seed = ck.meta.model_seed;
    meta.has_adapters = true;
    meta.adapter = cfg.adapter;
    meta.adapter_seed = adapter_seed;
    save_checkpoint(r.checkpoint_path, model, cfg, meta, adam.get());

    r.steps = cfg.training.max_steps;
    r.first_window_mean = st.first_window_mean;
    r.last_window_mean = st.last_window_mean;
    r.final_loss = st.final_loss;
    r.trainable_params = rep.trainable_params;
    r.total_params = rep.total_params;

    json summary = summary_common(cfg, st, r);
    summary["mode"] = "finetune";
    summary["dataset_tag"] = cfg.data.finetune_tag;
    summary["base_checkpoint"] = base;
    summary["adapter"] = json::parse(config_to_json(cfg))["adapter"];
    summary["adapter_params"] = rep.adapter_params;
    summary["base_params"] = rep.base_params;
    summary["trainable_fraction"] = rep.trainable_fraction;
    summary["base_weights_frozen"] = !cfg.adapter.joint_mode;
    r.summary_path = (dir / "summary.json").string();
    write_text(r.summary_path, summary.dump(2) + "\n");
    return r;
}

SampleResult cmd_sample(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                        std::int64_t n, std::uint64_t seed, bool merged) {
    if (n < 1) throw std::invalid_argument("cmd_sample: n must be >= 1");
    const std::string path =
        checkpoint_path.empty() ? checkpoint_default(cfg, "finetune") : checkpoint_path;
    Checkpoint ck = load_checkpoint(path);
    if (merged) {
        if (!ck.meta.has_adapters) {
            throw std::runtime_error("cmd_sample: --merged needs an adapter checkpoint");
        }
        ck.model->merge_adapters();
    }

    const std::string tag_name =
        ck.meta.has_adapters ? ck.config.data.finetune_tag : ck.config.data.pretrain_tag;
    const PhantomConfig& grid = ck.config.data.tags.at(tag_name).phantom;
    const DiffusionSchedule s = make_schedule(ck.config.diffusion.timesteps,
                                              ck.config.diffusion.beta_start,
                                              ck.config.diffusion.beta_end);

    const fs::path dir = fs::path(cfg.out_dir) / (merged ? "samples_merged" : "samples");
    fs::create_directories(dir);
    SampleResult res;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::uint64_t vol_seed = seed + static_cast<std::uint64_t>(i);
        VolumeRecord rec = sample_record(*ck.model, s, grid, tag_from_string(tag_name), vol_seed,
                                         cfg.sampling.deterministic);
        char name[48];
        std::snprintf(name, sizeof name, "sample_%020llu.vol",
                      static_cast<unsigned long long>(vol_seed));
        const std::string out = (dir / name).string();
        write_volume(out, rec);
        res.paths.push_back(out);
    }
    return res;
}

EvalResult cmd_eval(const ExperimentConfig& cfg, const std::string& real_dir,
                    const std::string& gen_dir, const std::string& protocol) {
    if (protocol != "pairwise" && protocol != "nearest") {
        throw std::invalid_argument("cmd_eval: protocol must be \"pairwise\" or \"nearest\"");
    }
    const std::vector<Tensor> real = read_volume_dir(real_dir);
    const std::vector<Tensor> gen = read_volume_dir(gen_dir);
    for (const Tensor& t : gen) {
        if (t.shape != real[0].shape) {
            throw std::runtime_error("cmd_eval: volume shape mismatch across directories");
        }
    }

    EvalResult r;
    r.protocol = protocol;
    r.n_real = static_cast<std::int64_t>(real.size());
    r.n_gen = static_cast<std::int64_t>(gen.size());

    MsSsimOptions opt;
    opt.scales = pick_scales(real, gen, opt.window);
    r.scales = opt.scales;
    if (protocol == "pairwise") {
        if (gen.size() < 2) {
            throw std::runtime_error("cmd_eval: pairwise protocol needs at least 2 generated volumes");
        }
        r.ms_ssim = pairwise_ms_ssim(gen, 1234, opt);
    } else {
        r.ms_ssim = ms_ssim_nearest_real(gen, real, opt);
    }

    const MmdResult m = mmd(real, gen, kEncoderSeed);
    r.mmd_biased = m.biased;
    r.mmd_unbiased = m.unbiased;
    r.bandwidth = m.bandwidth;
    r.nearest_mse = nearest_real_mse(gen, real);

    const fs::path dir = fs::path(cfg.out_dir) / "eval";
    fs::create_directories(dir);
    json report;
    report["counts"] = {{"real", r.n_real}, {"generated", r.n_gen}};
    report["ms_ssim"] = {{"protocol", protocol}, {"scales", r.scales}, {"value", r.ms_ssim}};
    report["mmd"] = {{"encoder_seed", kEncoderSeed},
                     {"biased", r.mmd_biased},
                     {"unbiased", r.mmd_unbiased},
                     {"bandwidth", r.bandwidth}};
    report["nearest_real_mse"] = r.nearest_mse;
    r.report_json_path = (dir / "report.json").string();
    write_text(r.report_json_path, report.dump(2) + "\n");

    std::ostringstream csv;
    csv << "metric,protocol,value\n";
    csv << "ms_ssim," << protocol << ',' << fmt_g(r.ms_ssim) << '\n';
    csv << "mmd_biased,rbf_encoder," << fmt_g(r.mmd_biased) << '\n';
    csv << "mmd_unbiased,rbf_encoder," << fmt_g(r.mmd_unbiased) << '\n';
    csv << "nearest_real_mse,voxel," << fmt_g(r.nearest_mse) << '\n';
    r.report_csv_path = (dir / "report.csv").string();
    write_text(r.report_csv_path, csv.str());
    return r;
}

AblateResult cmd_ablate_rank(const ExperimentConfig& cfg, const std::vector<std::int64_t>& ranks,
                             const std::string& base_checkpoint) {
    if (ranks.empty()) throw std::invalid_argument("cmd_ablate_rank: ranks must be non-empty");
    if (cfg.sampling.count < 2) {
        throw std::invalid_argument("cmd_ablate_rank: sampling.count must be >= 2 for pairwise MS-SSIM");
    }
    const std::string base =
        base_checkpoint.empty() ? checkpoint_default(cfg, "pretrain") : base_checkpoint;

    const std::vector<VolumeRecord> real_recs = load_tag_volumes(cfg, cfg.data.finetune_tag);
    std::vector<Tensor> real;
    real.reserve(real_recs.size());
    for (const VolumeRecord& rec : real_recs) real.push_back(rec.voxels);
    const std::vector<Tensor> train_vols = training_split(cfg, cfg.data.finetune_tag);

    const fs::path dir = fs::path(cfg.out_dir) / "ablate";
    fs::create_directories(dir);

    AblateResult res;
    for (const std::int64_t rank : ranks) {
        Checkpoint ck = load_checkpoint(base);
        if (ck.meta.has_adapters) {
            throw std::runtime_error("cmd_ablate_rank: base checkpoint already has adapters");
        }
        UNetLite& model = *ck.model;
        const std::uint64_t adapter_seed = cfg.training.seed + kAdapterSalt;
        const AttachReport rep = model.attach_adapters(cfg.adapter.kind, rank,
                                                       cfg.adapter.joint_mode, adapter_seed,
                                                       cfg.adapter.scaling);

        const fs::path rank_dir = dir / ("rank_" + std::to_string(rank));
        fs::create_directories(rank_dir);
        const DiffusionSchedule s = make_schedule(
            cfg.diffusion.timesteps, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
        std::unique_ptr<AdamOptimizer> adam;
        if (cfg.training.optimizer == "adam") adam = std::make_unique<AdamOptimizer>(cfg.training.lr);
        const LoopStats st = run_training_loop(model, train_vols, cfg, s, adam.get(),
                                               (rank_dir / "loss.csv").string());

        CheckpointMeta meta;
        meta.step = cfg.training.max_steps;
        meta.model_seed = ck.meta.model_seed;
        meta.has_adapters = true;
        meta.adapter = cfg.adapter;
        meta.adapter.rank = rank;
        meta.adapter_seed = adapter_seed;
        save_checkpoint((rank_dir / "checkpoint.ckpt").string(), model, cfg, meta, adam.get());

        const fs::path sample_dir = rank_dir / "samples";
        fs::create_directories(sample_dir);
        const PhantomConfig& grid = cfg.data.tags.at(cfg.data.finetune_tag).phantom;
        std::vector<Tensor> gen;
        for (std::int64_t i = 0; i < cfg.sampling.count; ++i) {
            const std::uint64_t vol_seed = cfg.training.seed + 770000ull +
                                           static_cast<std::uint64_t>(rank) * 1000ull +
                                           static_cast<std::uint64_t>(i);
            VolumeRecord rec = sample_record(model, s, grid, tag_from_string(cfg.data.finetune_tag),
                                             vol_seed, cfg.sampling.deterministic);
            char name[48];
            std::snprintf(name, sizeof name, "sample_%020llu.vol",
                          static_cast<unsigned long long>(vol_seed));
            write_volume((sample_dir / name).string(), rec);
            gen.push_back(std::move(rec.voxels));
        }

        MsSsimOptions opt;
        opt.scales = pick_scales(real, gen, opt.window);
        AblateRow row;
        row.rank = rank;
        row.n_params = rep.adapter_params;
        row.ms_ssim = pairwise_ms_ssim(gen, 1234, opt);
        row.mmd = mmd(real, gen, kEncoderSeed).biased;
        row.loss = st.last_window_mean;
        res.rows.push_back(row);
    }

    std::ostringstream csv;
    csv << "rank,n_params,ms_ssim,mmd,loss\n";
    for (const AblateRow& row : res.rows) {
        csv << row.rank << ',' << row.n_params << ',' << fmt_g(row.ms_ssim) << ','
            << fmt_g(row.mmd) << ',' << fmt_g(row.loss) << '\n';
    }
    res.csv_path = (dir / "ablate.csv").string();
    write_text(res.csv_path, csv.str());
    return res;
}

std::string cmd_param_count(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "model widths [";
    for (std::size_t i = 0; i < cfg.model.widths.size(); ++i) {
        os << (i ? "," : "") << cfg.model.widths[i];
    }
    os << "], adapter rank " << cfg.adapter.rank << "\n\n";

    // Per-layer counts at the configured kind and rank.
    {
        UNetLite model(cfg.model, 0);
        const AttachReport rep =
            model.attach_adapters(cfg.adapter.kind, cfg.adapter.rank, false, 0, cfg.adapter.scaling);
        os << "per-layer counts, kind " << adapter_kind_name(cfg.adapter.kind) << ":\n";
        for (const AdapterBinding& b : model.bindings()) {
            os << "  " << std::left << std::setw(16) << b.target << std::right << " "
               << std::setw(14) << adapter_kind_name(b.state.kind) << "  " << std::setw(8)
               << param_count(b.state) << "\n";
        }
        os << "  " << std::left << std::setw(16) << "total" << std::right << " " << std::setw(14)
           << "" << "  " << std::setw(8) << rep.adapter_params << "\n";
        os << "  base params " << rep.base_params << ", trainable fraction "
           << fmt_g(rep.trainable_fraction) << "\n\n";
    }

    os << "adapter totals by rank (convs + quanta_linear on the linear layers):\n";
    os << "  rank";
    const AdapterKind kinds[4] = {AdapterKind::TenvooL, AdapterKind::TenvooQ, AdapterKind::Lora2D,
                                  AdapterKind::Lora3D};
    for (AdapterKind k : kinds) os << std::setw(14) << adapter_kind_name(k);
    os << "\n";
    for (const std::int64_t r : {1, 2, 4, 6}) {
        os << "  " << std::setw(4) << r;
        for (AdapterKind k : kinds) {
            UNetLite model(cfg.model, 0);
            const AttachReport rep = model.attach_adapters(k, r, false, 0, cfg.adapter.scaling);
            os << std::setw(14) << rep.adapter_params;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace tenvoo

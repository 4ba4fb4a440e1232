#include "tenvoo/config.hpp"

#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tenvoo {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw std::invalid_argument("config: " + path + ": " + what);
}

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) fail(path + "." + it.key(), "unknown key");
    }
}

void opt_i64(const json& j, const std::string& path, const char* key, std::int64_t& out,
             std::int64_t lo, std::int64_t hi) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
    const std::int64_t x = v.get<std::int64_t>();
    if (x < lo || x > hi) {
        fail(path + "." + key, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                   "], got " + std::to_string(x));
    }
    out = x;
}

void opt_u64(const json& j, const std::string& path, const char* key, std::uint64_t& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        fail(path + "." + key, "expected a non-negative integer");
    }
    out = v.get<std::uint64_t>();
}

void opt_real(const json& j, const std::string& path, const char* key, double& out, double lo,
              double hi) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number()) fail(path + "." + key, "expected a number");
    const double x = v.get<double>();
    if (!(x >= lo && x <= hi)) {
        fail(path + "." + key, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                   "], got " + std::to_string(x));
    }
    out = x;
}

void opt_bool(const json& j, const std::string& path, const char* key, bool& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_boolean()) fail(path + "." + key, "expected a boolean");
    out = v.get<bool>();
}

void opt_string(const json& j, const std::string& path, const char* key, std::string& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_string()) fail(path + "." + key, "expected a string");
    out = v.get<std::string>();
}

void parse_model(const json& j, const std::string& path, UNetConfig& m) {
    check_keys(j, path, {"widths", "time_embed_dim", "gn_groups"});
    if (j.contains("widths")) {
        const json& v = j.at("widths");
        if (!v.is_array() || v.size() != 3) fail(path + ".widths", "expected [w0,w1,w2] (3 levels)");
        std::vector<std::int64_t> widths;
        for (const json& e : v) {
            if (!e.is_number_integer()) fail(path + ".widths", "expected integers");
            const std::int64_t w = e.get<std::int64_t>();
            if (w < 2 || w > 4096) fail(path + ".widths", "each width must be in [2, 4096]");
            widths.push_back(w);
        }
        m.widths = widths;
    }
    opt_i64(j, path, "time_embed_dim", m.temb_dim, 4, 4096);
    opt_i64(j, path, "gn_groups", m.gn_groups, 1, 4096);
    if (m.temb_dim % 2 != 0) fail(path + ".time_embed_dim", "must be even (sin/cos pairs)");
    for (std::int64_t w : m.widths) {
        if (w % m.gn_groups != 0) {
            fail(path + ".gn_groups",
                 "must divide every width, but " + std::to_string(w) + " % " +
                     std::to_string(m.gn_groups) + " != 0");
        }
    }
}

void parse_diffusion(const json& j, const std::string& path, DiffusionConfig& d) {
    check_keys(j, path, {"timesteps", "beta_start", "beta_end"});
    opt_i64(j, path, "timesteps", d.timesteps, 1, 100000);
    opt_real(j, path, "beta_start", d.beta_start, 1e-12, 0.999);
    opt_real(j, path, "beta_end", d.beta_end, 1e-12, 0.999);
    if (d.beta_end < d.beta_start) fail(path + ".beta_end", "must be >= beta_start");
}

void parse_adapter(const json& j, const std::string& path, AdapterConfig& a) {
    check_keys(j, path, {"kind", "rank", "scaling", "joint_mode"});
    if (j.contains("kind")) {
        std::string kind;
        opt_string(j, path, "kind", kind);
        try {
            a.kind = adapter_kind_from_name(kind);
        } catch (const std::invalid_argument& e) {
            fail(path + ".kind", e.what());
        }
        if (a.kind == AdapterKind::QuantaLinear) {
            fail(path + ".kind",
                 "quanta_linear always rides on the linear layers; pick the conv adapter: "
                 "tenvoo_l, tenvoo_q, lora2d, or lora3d");
        }
    }
    opt_i64(j, path, "rank", a.rank, 1, 64);
    opt_real(j, path, "scaling", a.scaling, 1e-6, 100.0);
    opt_bool(j, path, "joint_mode", a.joint_mode);
}

void parse_training(const json& j, const std::string& path, TrainingConfig& t) {
    check_keys(j, path, {"lr", "accumulation_steps", "max_steps", "seed", "optimizer"});
    opt_real(j, path, "lr", t.lr, 1e-12, 1.0);
    opt_i64(j, path, "accumulation_steps", t.accumulation_steps, 1, 1024);
    opt_i64(j, path, "max_steps", t.max_steps, 1, 10000000);
    opt_u64(j, path, "seed", t.seed);
    opt_string(j, path, "optimizer", t.optimizer);
    if (t.optimizer != "adam" && t.optimizer != "sgd") {
        fail(path + ".optimizer", "must be \"adam\" or \"sgd\", got \"" + t.optimizer + "\"");
    }
}

void parse_sampling(const json& j, const std::string& path, SamplingConfig& s) {
    check_keys(j, path, {"count", "deterministic"});
    opt_i64(j, path, "count", s.count, 1, 100000);
    opt_bool(j, path, "deterministic", s.deterministic);
}

void parse_tag_dataset(const json& j, const std::string& path, const std::string& tag,
                       TagDataset& t) {
    check_keys(j, path,
               {"grid", "count", "n_shells", "amplitude", "noise_sigma", "lesion_count",
                "lesion_radius"});
    try {
        t.phantom.tag = tag_from_string(tag);
    } catch (const std::invalid_argument& e) {
        fail(path, e.what());
    }
    if (j.contains("grid")) {
        const json& v = j.at("grid");
        if (!v.is_array() || v.size() != 3) fail(path + ".grid", "expected [D,H,W]");
        std::int64_t g[3];
        for (std::size_t i = 0; i < 3; ++i) {
            if (!v[i].is_number_integer()) fail(path + ".grid", "expected integers");
            g[i] = v[i].get<std::int64_t>();
            if (g[i] < 4 || g[i] > 512) fail(path + ".grid", "each extent must be in [4, 512]");
        }
        t.phantom.d = g[0];
        t.phantom.h = g[1];
        t.phantom.w = g[2];
    }
    opt_i64(j, path, "count", t.count, 1, 100000);
    std::int64_t shells = t.phantom.n_shells;
    opt_i64(j, path, "n_shells", shells, 1, 64);
    t.phantom.n_shells = static_cast<int>(shells);
    opt_real(j, path, "amplitude", t.phantom.amplitude, 0.0, 10.0);
    opt_real(j, path, "noise_sigma", t.phantom.noise_sigma, 0.0, 1.0);
    std::int64_t lesions = t.phantom.lesion_count;
    opt_i64(j, path, "lesion_count", lesions, 0, 64);
    t.phantom.lesion_count = static_cast<int>(lesions);
    if (j.contains("lesion_radius")) {
        const json& v = j.at("lesion_radius");
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
            fail(path + ".lesion_radius", "expected [lo, hi]");
        }
        t.phantom.lesion_radius_lo = v[0].get<double>();
        t.phantom.lesion_radius_hi = v[1].get<double>();
        if (!(t.phantom.lesion_radius_lo >= 1.0) ||
            t.phantom.lesion_radius_hi < t.phantom.lesion_radius_lo) {
            fail(path + ".lesion_radius", "need 1 <= lo <= hi");
        }
    }
}

void parse_data(const json& j, const std::string& path, DataConfig& d) {
    check_keys(j, path, {"split_fraction", "pretrain_tag", "finetune_tag", "tags"});
    opt_real(j, path, "split_fraction", d.split_fraction, 1e-9, 1.0);
    if (!(d.split_fraction < 1.0)) fail(path + ".split_fraction", "must be < 1");
    opt_string(j, path, "pretrain_tag", d.pretrain_tag);
    opt_string(j, path, "finetune_tag", d.finetune_tag);
    if (j.contains("tags")) {
        const json& v = j.at("tags");
        if (!v.is_object()) fail(path + ".tags", "expected an object keyed by dataset tag");
        d.tags.clear();
        for (auto it = v.begin(); it != v.end(); ++it) {
            TagDataset t;
            parse_tag_dataset(it.value(), path + ".tags." + it.key(), it.key(), t);
            d.tags.emplace(it.key(), std::move(t));
        }
    }
    if (d.tags.find(d.pretrain_tag) == d.tags.end()) {
        fail(path + ".pretrain_tag", "\"" + d.pretrain_tag + "\" is not a configured dataset tag");
    }
    if (d.tags.find(d.finetune_tag) == d.tags.end()) {
        fail(path + ".finetune_tag", "\"" + d.finetune_tag + "\" is not a configured dataset tag");
    }
}

}  // namespace

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    TagDataset pre;
    pre.phantom.tag = DatasetTag::pretrain;
    TagDataset shift;
    shift.phantom.tag = DatasetTag::shift_a;
    cfg.data.tags.emplace("pretrain", pre);
    cfg.data.tags.emplace("shiftA", shift);
    return cfg;
}

ExperimentConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
    }
    check_keys(j, "$", {"model", "diffusion", "adapter", "training", "sampling", "data", "output"});

    ExperimentConfig cfg = default_config();
    if (j.contains("model")) parse_model(j.at("model"), "model", cfg.model);
    if (j.contains("diffusion")) parse_diffusion(j.at("diffusion"), "diffusion", cfg.diffusion);
    if (j.contains("adapter")) parse_adapter(j.at("adapter"), "adapter", cfg.adapter);
    if (j.contains("training")) parse_training(j.at("training"), "training", cfg.training);
    if (j.contains("sampling")) parse_sampling(j.at("sampling"), "sampling", cfg.sampling);
    if (j.contains("data")) parse_data(j.at("data"), "data", cfg.data);
    if (j.contains("output")) {
        check_keys(j.at("output"), "output", {"dir"});
        opt_string(j.at("output"), "output", "dir", cfg.out_dir);
        if (cfg.out_dir.empty()) fail("output.dir", "must not be empty");
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    ExperimentConfig cfg = parse_config_text(ss.str());
    if (const char* env = std::getenv("TENVOO_OUT"); env != nullptr && env[0] != '\0') {
        cfg.out_dir = env;
    }
    return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["model"]["widths"] = cfg.model.widths;
    j["model"]["time_embed_dim"] = cfg.model.temb_dim;
    j["model"]["gn_groups"] = cfg.model.gn_groups;
    j["diffusion"]["timesteps"] = cfg.diffusion.timesteps;
    j["diffusion"]["beta_start"] = cfg.diffusion.beta_start;
    j["diffusion"]["beta_end"] = cfg.diffusion.beta_end;
    j["adapter"]["kind"] = adapter_kind_name(cfg.adapter.kind);
    j["adapter"]["rank"] = cfg.adapter.rank;
    j["adapter"]["scaling"] = cfg.adapter.scaling;
    j["adapter"]["joint_mode"] = cfg.adapter.joint_mode;
    j["training"]["lr"] = cfg.training.lr;
    j["training"]["accumulation_steps"] = cfg.training.accumulation_steps;
    j["training"]["max_steps"] = cfg.training.max_steps;
    j["training"]["seed"] = cfg.training.seed;
    j["training"]["optimizer"] = cfg.training.optimizer;
    j["sampling"]["count"] = cfg.sampling.count;
    j["sampling"]["deterministic"] = cfg.sampling.deterministic;
    j["data"]["split_fraction"] = cfg.data.split_fraction;
    j["data"]["pretrain_tag"] = cfg.data.pretrain_tag;
    j["data"]["finetune_tag"] = cfg.data.finetune_tag;
    for (const auto& [tag, t] : cfg.data.tags) {
        json e;
        e["grid"] = {t.phantom.d, t.phantom.h, t.phantom.w};
        e["count"] = t.count;
        e["n_shells"] = t.phantom.n_shells;
        e["amplitude"] = t.phantom.amplitude;
        e["noise_sigma"] = t.phantom.noise_sigma;
        e["lesion_count"] = t.phantom.lesion_count;
        e["lesion_radius"] = {t.phantom.lesion_radius_lo, t.phantom.lesion_radius_hi};
        j["data"]["tags"][tag] = std::move(e);
    }
    j["output"]["dir"] = cfg.out_dir;
    return j.dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string s = config_to_json(cfg);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace tenvoo

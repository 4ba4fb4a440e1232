#include "tenvoo/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "tenvoo/adapters.hpp"

namespace tenvoo {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'T', 'V', 'O', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_tensor(std::string& blobs, const Tensor& t) {
    for (double v : t.data) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) blobs.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

void read_tensor(const std::string& buf, std::size_t blob_base, std::uint64_t offset, Tensor& t,
                 const std::string& what) {
    const std::uint64_t bytes = 8 * static_cast<std::uint64_t>(t.data.size());
    if (blob_base + offset + bytes > buf.size()) {
        throw std::runtime_error("load_checkpoint: blob out of range for " + what);
    }
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data()) + blob_base + offset;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[8 * i + b]) << (8 * b);
        t.data[i] = std::bit_cast<double>(bits);
    }
}

json shape_json(const Shape& s) {
    json a = json::array();
    for (std::int64_t e : s) a.push_back(e);
    return a;
}

Shape shape_from_json(const json& a) {
    Shape s;
    for (const json& e : a) s.push_back(e.get<std::int64_t>());
    return s;
}

// Reads the container head and returns (index, blob_base).
std::pair<json, std::size_t> read_container(const std::string& path, std::string& buf) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    buf.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 16 || !std::equal(kMagic, kMagic + sizeof(kMagic), buf.data())) {
        throw std::runtime_error("load_checkpoint: not a checkpoint file (bad magic): " + path);
    }
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    const std::uint32_t version = get_u32_le(p + 8);
    if (version != kVersion) {
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint64_t ilen = get_u32_le(p + 12);
    if (16 + ilen > buf.size()) throw std::runtime_error("load_checkpoint: truncated index");
    json index;
    try {
        index = json::parse(buf.substr(16, ilen));
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("load_checkpoint: malformed index: ") + e.what());
    }
    return {std::move(index), static_cast<std::size_t>(16 + ilen)};
}

}  // namespace

void save_checkpoint(const std::string& path, const UNetLite& model, const ExperimentConfig& cfg,
                     const CheckpointMeta& meta, const AdamOptimizer* adam) {
    json index;
    index["dtype"] = "f64";
    index["config"] = json::parse(config_to_json(cfg));
    index["config_hash"] = config_hash(cfg);
    index["step"] = meta.step;
    index["model_seed"] = meta.model_seed;

    std::string blobs;

    json params = json::array();
    for (const Parameter* p : model.params().all()) {
        json e;
        e["name"] = p->name;
        e["shape"] = shape_json(p->value.shape);
        e["trainable"] = p->trainable;
        e["offset"] = blobs.size();
        append_tensor(blobs, p->value);
        params.push_back(std::move(e));
    }
    index["params"] = std::move(params);

    json ad;
    ad["present"] = meta.has_adapters;
    if (meta.has_adapters) {
        ad["kind"] = adapter_kind_name(meta.adapter.kind);
        ad["rank"] = meta.adapter.rank;
        ad["scaling"] = meta.adapter.scaling;
        ad["joint_mode"] = meta.adapter.joint_mode;
        ad["seed"] = meta.adapter_seed;
        json topo = json::object();
        json frozen = json::array();
        for (const AdapterBinding& b : model.bindings()) {
            topo[b.prefix] = json::parse(adapter_topology_json(b.state));
            json e;
            e["prefix"] = b.prefix;
            e["shape"] = shape_json(b.state.frozen_materialized.shape);
            e["offset"] = blobs.size();
            append_tensor(blobs, b.state.frozen_materialized);
            frozen.push_back(std::move(e));
        }
        ad["topologies"] = std::move(topo);
        index["frozen"] = std::move(frozen);
    }
    index["adapter"] = std::move(ad);

    json opt;
    opt["present"] = adam != nullptr;
    if (adam != nullptr) {
        opt["algo"] = "adam";
        opt["lr"] = adam->lr();
        opt["beta1"] = adam->beta1();
        opt["beta2"] = adam->beta2();
        opt["eps"] = adam->eps();
        opt["t"] = adam->t();
        json slots = json::array();
        for (const auto& [name, slot] : adam->slots()) {
            json e;
            e["name"] = name;
            e["shape"] = shape_json(slot.m.shape);
            e["m_offset"] = blobs.size();
            append_tensor(blobs, slot.m);
            e["v_offset"] = blobs.size();
            append_tensor(blobs, slot.v);
            slots.push_back(std::move(e));
        }
        opt["slots"] = std::move(slots);
    }
    index["optimizer"] = std::move(opt);

    const std::string is = index.dump();
    std::string head;
    head.reserve(16 + is.size());
    head.append(kMagic, sizeof(kMagic));
    put_u32_le(head, kVersion);
    put_u32_le(head, static_cast<std::uint32_t>(is.size()));
    head += is;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    f.write(blobs.data(), static_cast<std::streamsize>(blobs.size()));
    if (!f) throw std::runtime_error("save_checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string buf;
    auto [index, blob_base] = read_container(path, buf);

    Checkpoint ck;
    try {
        if (index.at("dtype").get<std::string>() != "f64") {
            throw std::runtime_error("dtype must be f64");
        }
        ck.config = parse_config_text(index.at("config").dump());
        ck.config_hash = index.at("config_hash").get<std::uint64_t>();
        ck.meta.step = index.at("step").get<std::int64_t>();
        ck.meta.model_seed = index.at("model_seed").get<std::uint64_t>();

        const json& ad = index.at("adapter");
        ck.meta.has_adapters = ad.at("present").get<bool>();
        if (ck.meta.has_adapters) {
            ck.meta.adapter.kind = adapter_kind_from_name(ad.at("kind").get<std::string>());
            ck.meta.adapter.rank = ad.at("rank").get<std::int64_t>();
            ck.meta.adapter.scaling = ad.at("scaling").get<double>();
            ck.meta.adapter.joint_mode = ad.at("joint_mode").get<bool>();
            ck.meta.adapter_seed = ad.at("seed").get<std::uint64_t>();
        }

        ck.model = std::make_unique<UNetLite>(ck.config.model, ck.meta.model_seed);
        if (ck.meta.has_adapters) {
            ck.model->attach_adapters(ck.meta.adapter.kind, ck.meta.adapter.rank,
                                      ck.meta.adapter.joint_mode, ck.meta.adapter_seed,
                                      ck.meta.adapter.scaling);
        }

        std::size_t restored = 0;
        for (const json& e : index.at("params")) {
            const std::string name = e.at("name").get<std::string>();
            if (!ck.model->params().contains(name)) {
                throw std::runtime_error("parameter " + name + " not present in rebuilt model");
            }
            Parameter& p = ck.model->params().get(name);
            if (p.value.shape != shape_from_json(e.at("shape"))) {
                throw std::runtime_error("shape mismatch for parameter " + name);
            }
            read_tensor(buf, blob_base, e.at("offset").get<std::uint64_t>(), p.value, name);
            p.trainable = e.at("trainable").get<bool>();
            ++restored;
        }
        if (restored != static_cast<std::size_t>(ck.model->params().all().size())) {
            throw std::runtime_error("checkpoint does not cover every model parameter");
        }

        if (ck.meta.has_adapters) {
            for (const json& e : index.at("frozen")) {
                const std::string prefix = e.at("prefix").get<std::string>();
                bool found = false;
                for (AdapterBinding& b : ck.model->bindings()) {
                    if (b.prefix != prefix) continue;
                    if (b.state.frozen_materialized.shape != shape_from_json(e.at("shape"))) {
                        throw std::runtime_error("frozen shape mismatch for " + prefix);
                    }
                    read_tensor(buf, blob_base, e.at("offset").get<std::uint64_t>(),
                                b.state.frozen_materialized, prefix);
                    found = true;
                    break;
                }
                if (!found) throw std::runtime_error("no binding for frozen blob " + prefix);
            }
            ck.model->sync_adapters();
        }

        const json& opt = index.at("optimizer");
        if (opt.at("present").get<bool>()) {
            ck.adam = std::make_unique<AdamOptimizer>(
                opt.at("lr").get<double>(), opt.at("beta1").get<double>(),
                opt.at("beta2").get<double>(), opt.at("eps").get<double>());
            ck.adam->set_t(opt.at("t").get<std::int64_t>());
            for (const json& e : opt.at("slots")) {
                const std::string name = e.at("name").get<std::string>();
                AdamSlot slot;
                slot.m = Tensor::zeros(shape_from_json(e.at("shape")));
                slot.v = Tensor::zeros(slot.m.shape);
                read_tensor(buf, blob_base, e.at("m_offset").get<std::uint64_t>(), slot.m,
                            name + ".m");
                read_tensor(buf, blob_base, e.at("v_offset").get<std::uint64_t>(), slot.v,
                            name + ".v");
                ck.adam->slots().emplace(name, std::move(slot));
            }
        }
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("load_checkpoint: malformed index: ") + e.what());
    }
    return ck;
}

std::string inspect_checkpoint(const std::string& path) {
    std::string buf;
    auto [index, blob_base] = read_container(path, buf);
    std::ostringstream os;
    try {
        os << "checkpoint " << path << "\n";
        os << "  step: " << index.at("step").get<std::int64_t>() << "\n";
        os << "  config_hash: " << index.at("config_hash").get<std::uint64_t>() << "\n";
        os << "  model_seed: " << index.at("model_seed").get<std::uint64_t>() << "\n";
        std::int64_t entries = 0, trainable = 0, total = 0;
        for (const json& e : index.at("params")) {
            ++entries;
            std::int64_t n = 1;
            for (const json& d : e.at("shape")) n *= d.get<std::int64_t>();
            total += n;
            if (e.at("trainable").get<bool>()) trainable += n;
        }
        os << "  parameters: " << entries << " tensors, " << total << " entries, " << trainable
           << " trainable\n";
        const json& ad = index.at("adapter");
        if (ad.at("present").get<bool>()) {
            os << "  adapter: " << ad.at("kind").get<std::string>() << " rank "
               << ad.at("rank").get<std::int64_t>() << " scaling " << ad.at("scaling").get<double>()
               << (ad.at("joint_mode").get<bool>() ? " (joint)" : "") << ", "
               << ad.at("topologies").size() << " adapted layers\n";
        } else {
            os << "  adapter: none\n";
        }
        const json& opt = index.at("optimizer");
        if (opt.at("present").get<bool>()) {
            os << "  optimizer: adam t=" << opt.at("t").get<std::int64_t>() << " lr "
               << opt.at("lr").get<double>() << "\n";
        } else {
            os << "  optimizer: none\n";
        }
        os << "  payload: " << (buf.size() - blob_base) << " blob bytes\n";
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("inspect_checkpoint: malformed index: ") + e.what());
    }
    return os.str();
}

}  // namespace tenvoo

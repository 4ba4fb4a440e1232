#include "tenvoo/volume_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace tenvoo {

namespace {

constexpr char kMagic[8] = {'T', 'V', 'O', 'O', 'V', 'O', 'L', '1'};

void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_volume(const std::string& path, const VolumeRecord& rec) {
    if (rec.voxels.rank() != 3) throw std::invalid_argument("write_volume: voxels must be [D,H,W]");

    nlohmann::json hdr;
    hdr["dims"] = {rec.voxels.shape[0], rec.voxels.shape[1], rec.voxels.shape[2]};
    hdr["tag"] = to_string(rec.tag);
    hdr["seed"] = rec.seed;
    hdr["dtype"] = "f32";
    const std::string hs = hdr.dump();

    std::string buf;
    buf.reserve(12 + hs.size() + 4 * rec.voxels.data.size());
    buf.append(kMagic, sizeof(kMagic));
    put_u32_le(buf, static_cast<std::uint32_t>(hs.size()));
    buf += hs;
    for (double v : rec.voxels.data) {
        put_u32_le(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_volume: cannot open " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("write_volume: short write to " + path);
}

VolumeRecord read_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_volume: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());

    if (buf.size() < 12 || !std::equal(kMagic, kMagic + sizeof(kMagic), buf.data())) {
        throw std::runtime_error("read_volume: not a volume file (bad magic): " + path);
    }
    const std::uint64_t hlen = get_u32_le(p + 8);
    if (12 + hlen > buf.size()) throw std::runtime_error("read_volume: truncated header: " + path);

    VolumeRecord rec;
    std::uint64_t numel = 0;
    try {
        const nlohmann::json hdr = nlohmann::json::parse(buf.substr(12, hlen));
        const auto& dims = hdr.at("dims");
        if (!dims.is_array() || dims.size() != 3) throw std::runtime_error("dims must be [D,H,W]");
        Shape shape;
        for (const auto& d : dims) {
            const std::int64_t e = d.get<std::int64_t>();
            if (e < 1) throw std::runtime_error("dims must be positive");
            shape.push_back(e);
        }
        if (hdr.at("dtype").get<std::string>() != "f32") throw std::runtime_error("dtype must be f32");
        rec.tag = tag_from_string(hdr.at("tag").get<std::string>());
        rec.seed = hdr.at("seed").get<std::uint64_t>();
        rec.voxels = Tensor::zeros(shape);
        numel = rec.voxels.data.size();
    } catch (const std::exception& e) {
        throw std::runtime_error("read_volume: malformed header in " + path + ": " + e.what());
    }

    if (buf.size() != 12 + hlen + 4 * numel) {
        throw std::runtime_error("read_volume: payload size mismatch in " + path);
    }
    const unsigned char* payload = p + 12 + hlen;
    for (std::uint64_t i = 0; i < numel; ++i) {
        rec.voxels.data[i] =
            static_cast<double>(std::bit_cast<float>(get_u32_le(payload + 4 * i)));
    }
    return rec;
}

}  // namespace tenvoo

#pragma once

#include <string>

#include "tenvoo/phantom.hpp"

namespace tenvoo {

// Binary container: 8-byte magic "TVOOVOL1", u32 little-endian header length,
// JSON header {dims:[D,H,W], tag, seed, dtype:"f32"}, then D*H*W little-endian
// f32 voxels in row-major order. Round trips are bit-exact because phantoms
// are quantised to f32 at generation.
void write_volume(const std::string& path, const VolumeRecord& rec);
VolumeRecord read_volume(const std::string& path);

}  // namespace tenvoo

#pragma once

#include "psplat/gaussian.hpp"

#include <filesystem>

namespace psplat {

// Binary little-endian PLY with the usual splat property names
// (x y z, f_dc_*, f_rest_*, opacity, scale_*, rot_*). Raw, pre-activation values.
void save_checkpoint(const GaussianCloud& cloud, const std::filesystem::path& path);
GaussianCloud load_checkpoint(const std::filesystem::path& path);

} // namespace psplat

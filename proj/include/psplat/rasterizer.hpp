#pragma once

#include "psplat/common.hpp"
#include "psplat/gaussian.hpp"
#include "psplat/image.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace psplat {

inline constexpr int kTileSize = 16;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;
// Splats are truncated at their 3-sigma ellipse, the same support used for binning.
inline constexpr double kMaxMahalanobisSq = 9.0;

// Splat indices per tile, each list sorted by (depth, source_index).
struct TileBins {
    int tile_size = kTileSize;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> lists;

    const std::vector<std::uint32_t>& tile(int tx, int ty) const { return lists[static_cast<std::size_t>(ty) * tiles_x + tx]; }
    std::size_t total_entries() const;
};

// Assigns each splat to every tile intersecting its axis-aligned 3-sigma box
// (clipped to the image).
TileBins tile_bin(std::span<const Splat2D> splats, int width, int height, int tile_size = kTileSize);

// Integer pixel range covered by a splat's 3-sigma box, before clipping.
struct PixelBox {
    int x0, y0, x1, y1; // inclusive
};
PixelBox splat_pixel_box(const Splat2D& s);

struct RenderGrads {
    std::vector<Vec3> d_mu;
    std::vector<Vec3> d_log_scale;
    std::vector<double> d_opacity_raw;
    std::vector<Vec4> d_rotation;
    std::vector<Vec3> d_color;
    std::vector<double> d_mean2d_norm; // |dL/d mean2d| with the mean in NDC units
    std::vector<bool> participated;

    explicit RenderGrads(std::size_t n = 0);
    std::size_t size() const { return d_mu.size(); }
};

// Projected splats and tile lists of one forward pass, so its backward pass
// need not project and sort again. No per-pixel data is kept.
class ForwardState;

struct RenderOutput {
    Image image;
    std::size_t tile_entries = 0; // total (tile, splat) pairs of this frame
    std::size_t visible = 0;      // splats that survived the near-plane cull
    std::shared_ptr<const ForwardState> state; // set when requested
};

// Depth-sorted alpha blending over 16x16 tiles. Deterministic for any thread count.
Image render(const GaussianCloud& cloud, const CameraPose& pose, const Vec3& background);
RenderOutput render_with_stats(const GaussianCloud& cloud, const CameraPose& pose, const Vec3& background,
                               bool keep_state = false);

// Exact gradients of the blend w.r.t. every Gaussian parameter given dL/dimage.
// The blend is recomputed tile by tile. Throws InvalidArgument when
// d_image does not match the pose dimensions.
RenderGrads render_backward(const GaussianCloud& cloud, const CameraPose& pose, const Vec3& background,
                            const Image& d_image);
// Same gradients reusing a kept forward state; the cloud must be unchanged since.
RenderGrads render_backward(const GaussianCloud& cloud, const ForwardState& state, const Image& d_image);

// Worker threads used by render/render_backward. Defaults to PSPLAT_THREADS or 1.
void set_render_threads(int n);
int render_threads();

} // namespace psplat

#include "psplat/rasterizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

namespace psplat {

namespace {

int threads_from_env() {
    if (const char* env = std::getenv("PSPLAT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

std::atomic<int> g_threads{threads_from_env()};

template <class F>
void for_each_tile(int n_tiles, F&& fn) {
    const int nt = std::min(render_threads(), n_tiles);
    if (nt <= 1) {
        for (int i = 0; i < n_tiles; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::jthread> workers;
    workers.reserve(nt);
    for (int w = 0; w < nt; ++w) {
        workers.emplace_back([&] {
            for (int i = next++; i < n_tiles; i = next++) fn(i);
        });
    }
}

// Per-splat data in the layout the pixel loop wants.
struct BlendSplat {
    double mx, my;
    double ca, cb, cc; // conic: power = -0.5 (ca dx^2 + cc dy^2) - cb dx dy
    double opacity;
    double reject_power; // below this, alpha < kMinAlpha or outside 3 sigma
    double x0, x1, y0, y1; // axis-aligned 3-sigma box, padded against round-off
    Vec3 color;
};

// Pixels are blended in square sub-blocks of a tile; each sub-block only visits
// splats whose 3-sigma box reaches it. Outside that box the Mahalanobis distance
// exceeds the truncation radius, so the skipped splats contribute nothing.
constexpr int kSubBlock = 4;

struct Frame {
    std::vector<Splat2D> splats;
    std::vector<BlendSplat> blend;
    TileBins bins;
};

Frame prepare_frame(const GaussianCloud& cloud, const CameraPose& pose) {
    pose.validate();
    Frame f;
    f.splats.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        auto s = project_gaussian(cloud[i], pose);
        if (!s) continue;
        s->source_index = static_cast<std::uint32_t>(i);
        f.splats.push_back(*s);
    }
    f.blend.resize(f.splats.size());
    for (std::size_t k = 0; k < f.splats.size(); ++k) {
        const Splat2D& s = f.splats[k];
        BlendSplat& b = f.blend[k];
        const double det = s.cov(0, 0) * s.cov(1, 1) - s.cov(0, 1) * s.cov(0, 1);
        b.mx = s.mean.x();
        b.my = s.mean.y();
        b.ca = s.cov(1, 1) / det;
        b.cb = -s.cov(0, 1) / det;
        b.cc = s.cov(0, 0) / det;
        b.opacity = s.opacity;
        b.color = s.color;
        // conservative pre-check; exact tests follow in the pixel loop
        b.reject_power = std::max(-0.5 * kMaxMahalanobisSq, std::log(kMinAlpha / s.opacity)) - 1e-9;
        // (Sigma^-1)_xx >= 1 / Sigma_xx, so beyond 3 sqrt(Sigma_xx) in x the distance exceeds 3 sigma
        const double rx = 3.0 * std::sqrt(s.cov(0, 0)) * (1.0 + 1e-9) + 1e-6;
        const double ry = 3.0 * std::sqrt(s.cov(1, 1)) * (1.0 + 1e-9) + 1e-6;
        b.x0 = b.mx - rx;
        b.x1 = b.mx + rx;
        b.y0 = b.my - ry;
        b.y1 = b.my + ry;
    }
    f.bins = tile_bin(f.splats, pose.width, pose.height);
    return f;
}

struct Contribution {
    std::uint32_t slot; // position in the tile list
    double alpha;
    double transmittance; // before this splat
};

// Copies a tile's splats into one contiguous array in blend order.
void gather_tile(const Frame& f, const std::vector<std::uint32_t>& list, std::vector<BlendSplat>& out) {
    out.resize(list.size());
    for (std::size_t slot = 0; slot < list.size(); ++slot) out[slot] = f.blend[list[slot]];
}

// Per sub-block slot lists (in blend order) of the splats whose padded box meets
// that sub-block. Sub-block (sx, sy) of the tile at pixel origin (ox, oy) covers
// pixels [ox + sx B, ox + sx B + B) x [oy + sy B, oy + sy B + B).
void bin_sub_blocks(const std::vector<BlendSplat>& splats, int ox, int oy, int ts,
                    std::vector<std::vector<std::uint32_t>>& out) {
    const int nb = (ts + kSubBlock - 1) / kSubBlock;
    out.resize(static_cast<std::size_t>(nb) * nb);
    for (auto& l : out) l.clear();
    const auto clamp_block = [nb](double v) { return static_cast<int>(std::clamp(v, -1.0, double(nb))); };
    for (std::size_t slot = 0; slot < splats.size(); ++slot) {
        const BlendSplat& s = splats[slot];
        // block b covers integer pixels [b B, b B + B - 1] relative to the origin
        const int bx0 = std::max(0, clamp_block(std::ceil((s.x0 - ox - (kSubBlock - 1)) / kSubBlock)));
        const int bx1 = std::min(nb - 1, clamp_block(std::floor((s.x1 - ox) / kSubBlock)));
        const int by0 = std::max(0, clamp_block(std::ceil((s.y0 - oy - (kSubBlock - 1)) / kSubBlock)));
        const int by1 = std::min(nb - 1, clamp_block(std::floor((s.y1 - oy) / kSubBlock)));
        for (int by = by0; by <= by1; ++by) {
            for (int bx = bx0; bx <= bx1; ++bx) out[static_cast<std::size_t>(by) * nb + bx].push_back(static_cast<std::uint32_t>(slot));
        }
    }
}

// Blends one pixel front to back over the given slots. Returns the final transmittance.
template <bool kRecord>
double blend_pixel(const std::vector<BlendSplat>& splats, const std::vector<std::uint32_t>& slots, double px,
                   double py, Vec3& out, std::vector<Contribution>* record) {
    double t = 1.0;
    Vec3 c = Vec3::Zero();
    for (const std::uint32_t slot : slots) {
        const BlendSplat& s = splats[slot];
        const double dx = px - s.mx;
        const double dy = py - s.my;
        const double power = -0.5 * (s.ca * dx * dx + s.cc * dy * dy) - s.cb * dx * dy;
        if (power < s.reject_power) continue;
        if (power < -0.5 * kMaxMahalanobisSq) continue;
        const double alpha = s.opacity * std::exp(power);
        if (alpha < kMinAlpha) continue;
        c += s.color * (alpha * t);
        if constexpr (kRecord) record->push_back({slot, alpha, t});
        t *= 1.0 - alpha;
        if (t < kMinTransmittance) break;
    }
    out = c;
    return t;
}

// 2D-space gradient accumulators for the splats of one tile.
struct TileGrads {
    std::vector<double> d_mx, d_my, d_ca, d_cb, d_cc, d_opacity;
    std::vector<Vec3> d_color;
    std::vector<char> hit;

    void resize(std::size_t n) {
        d_mx.assign(n, 0.0);
        d_my.assign(n, 0.0);
        d_ca.assign(n, 0.0);
        d_cb.assign(n, 0.0);
        d_cc.assign(n, 0.0);
        d_opacity.assign(n, 0.0);
        d_color.assign(n, Vec3::Zero());
        hit.assign(n, 0);
    }
};

// Chain rule from screen-space (mean, cov2d, activated opacity/color) to the
// stored Gaussian parameters.
void backprop_gaussian(const Gaussian& g, const CameraPose& pose, const Vec2& d_mean, const Mat2& d_cov,
                       double d_opacity, const Vec3& d_color, RenderGrads& out, std::size_t i) {
    ProjectionTerms p;
    project_terms(g, pose, p);
    const Mat3& w = p.view_rotation;
    const double tx = p.cam_point.x(), ty = p.cam_point.y(), tz = p.cam_point.z();
    const double fx = pose.fx, fy = pose.fy;
    const double iz = 1.0 / tz, iz2 = iz * iz, iz3 = iz2 * iz;

    const Mat23 m = p.jacobian * w;
    const Mat3 d_sigma = m.transpose() * d_cov * m;
    const Mat23 d_m = 2.0 * d_cov * m * p.cov3d;
    const Mat23 d_j = d_m * w.transpose();

    Vec3 dt;
    dt.x() = d_mean.x() * fx * iz;
    dt.y() = d_mean.y() * fy * iz;
    dt.z() = -d_mean.x() * fx * tx * iz2 - d_mean.y() * fy * ty * iz2;
    dt.x() += d_j(0, 2) * (-fx * iz2);
    dt.y() += d_j(1, 2) * (-fy * iz2);
    dt.z() += d_j(0, 0) * (-fx * iz2) + d_j(0, 2) * (2.0 * fx * tx * iz3) + d_j(1, 1) * (-fy * iz2) +
              d_j(1, 2) * (2.0 * fy * ty * iz3);
    out.d_mu[i] = w.transpose() * dt;

    const Mat3& r = p.rotation;
    const Vec3 var = p.scales.cwiseAbs2();
    const Mat3 rt_g_r = r.transpose() * d_sigma * r;
    for (int k = 0; k < 3; ++k) {
        // d/ds_k of exp(s_k)^2 = 2 exp(2 s_k)
        out.d_log_scale[i][k] = rt_g_r(k, k) * 2.0 * var[k];
    }
    const Mat3 d_r = 2.0 * d_sigma * r * var.asDiagonal();

    const Vec4& q = g.rotation;
    const double n = q.norm();
    const double qw = q[0] / n, qx = q[1] / n, qy = q[2] / n, qz = q[3] / n;
    Vec4 d_qn;
    d_qn[0] = 2.0 * (-qz * d_r(0, 1) + qy * d_r(0, 2) + qz * d_r(1, 0) - qx * d_r(1, 2) - qy * d_r(2, 0) +
                     qx * d_r(2, 1));
    d_qn[1] = 2.0 * (qy * d_r(0, 1) + qz * d_r(0, 2) + qy * d_r(1, 0) - 2.0 * qx * d_r(1, 1) - qw * d_r(1, 2) +
                     qz * d_r(2, 0) + qw * d_r(2, 1) - 2.0 * qx * d_r(2, 2));
    d_qn[2] = 2.0 * (-2.0 * qy * d_r(0, 0) + qx * d_r(0, 1) + qw * d_r(0, 2) + qx * d_r(1, 0) + qz * d_r(1, 2) -
                     qw * d_r(2, 0) + qz * d_r(2, 1) - 2.0 * qy * d_r(2, 2));
    d_qn[3] = 2.0 * (-2.0 * qz * d_r(0, 0) - qw * d_r(0, 1) + qx * d_r(0, 2) + qw * d_r(1, 0) -
                     2.0 * qz * d_r(1, 1) + qy * d_r(1, 2) + qx * d_r(2, 0) + qy * d_r(2, 1));
    const Vec4 qn(qw, qx, qy, qz);
    out.d_rotation[i] = (d_qn - qn * qn.dot(d_qn)) / n;

    const double o = sigmoid(g.opacity_raw);
    out.d_opacity_raw[i] = d_opacity * o * (1.0 - o);

    for (int k = 0; k < 3; ++k) {
        const double c = g.color[k];
        out.d_color[i][k] = (c >= 0.0 && c <= 1.0) ? d_color[k] : 0.0;
    }
    // view-space gradient in normalized device coordinates (pixel = (ndc + 1) W / 2 - 1/2),
    // which keeps the densification threshold independent of image resolution
    out.d_mean2d_norm[i] = Vec2(d_mean.x() * 0.5 * pose.width, d_mean.y() * 0.5 * pose.height).norm();
}

} // namespace

void set_render_threads(int n) { g_threads = std::max(1, n); }
int render_threads() { return g_threads.load(); }

std::size_t TileBins::total_entries() const {
    std::size_t n = 0;
    for (const auto& l : lists) n += l.size();
    return n;
}

PixelBox splat_pixel_box(const Splat2D& s) {
    const double rx = 3.0 * std::sqrt(s.cov(0, 0));
    const double ry = 3.0 * std::sqrt(s.cov(1, 1));
    const auto lo = [](double v) { return static_cast<int>(std::max(std::ceil(v), -1e9)); };
    const auto hi = [](double v) { return static_cast<int>(std::min(std::floor(v), 1e9)); };
    return {lo(s.mean.x() - rx), lo(s.mean.y() - ry), hi(s.mean.x() + rx), hi(s.mean.y() + ry)};
}

TileBins tile_bin(std::span<const Splat2D> splats, int width, int height, int tile_size) {
    if (tile_size < 1) throw InvalidArgument("tile size must be at least 1");
    TileBins bins;
    bins.tile_size = tile_size;
    bins.tiles_x = (width + tile_size - 1) / tile_size;
    bins.tiles_y = (height + tile_size - 1) / tile_size;
    bins.lists.resize(static_cast<std::size_t>(bins.tiles_x) * bins.tiles_y);

    std::vector<std::uint32_t> order(splats.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
        return splats[a].source_index < splats[b].source_index;
    });

    for (std::uint32_t k : order) {
        const Splat2D& s = splats[k];
        if (!s.mean.allFinite() || !s.cov.allFinite()) continue;
        PixelBox box = splat_pixel_box(s);
        box.x0 = std::max(box.x0, 0);
        box.y0 = std::max(box.y0, 0);
        box.x1 = std::min(box.x1, width - 1);
        box.y1 = std::min(box.y1, height - 1);
        if (box.x0 > box.x1 || box.y0 > box.y1) continue;
        for (int ty = box.y0 / tile_size; ty <= box.y1 / tile_size; ++ty) {
            for (int tx = box.x0 / tile_size; tx <= box.x1 / tile_size; ++tx) {
                bins.lists[static_cast<std::size_t>(ty) * bins.tiles_x + tx].push_back(k);
            }
        }
    }
    return bins;
}

RenderGrads::RenderGrads(std::size_t n)
    : d_mu(n, Vec3::Zero()),
      d_log_scale(n, Vec3::Zero()),
      d_opacity_raw(n, 0.0),
      d_rotation(n, Vec4::Zero()),
      d_color(n, Vec3::Zero()),
      d_mean2d_norm(n, 0.0),
      participated(n, false) {}

// The projected, binned splats of one forward pass, reused by its backward pass.
class ForwardState {
public:
    CameraPose pose;
    Vec3 background;
    std::size_t cloud_size = 0;
    Frame frame;
};

namespace {

void forward_tile(const Frame& f, const CameraPose& pose, const Vec3& background, int tile, Image& img) {
    const int ts = f.bins.tile_size;
    const int tx = tile % f.bins.tiles_x, ty = tile / f.bins.tiles_x;
    std::vector<BlendSplat> splats;
    gather_tile(f, f.bins.lists[tile], splats);
    std::vector<std::vector<std::uint32_t>> blocks;
    const int ox = tx * ts, oy = ty * ts;
    bin_sub_blocks(splats, ox, oy, ts, blocks);
    const int nb = (ts + kSubBlock - 1) / kSubBlock;
    const int y_end = std::min(oy + ts, pose.height);
    const int x_end = std::min(ox + ts, pose.width);
    for (int by = oy; by < y_end; by += kSubBlock) {
        for (int bx = ox; bx < x_end; bx += kSubBlock) {
            const int bx1 = std::min(bx + kSubBlock, x_end), by1 = std::min(by + kSubBlock, y_end);
            const auto& slots = blocks[static_cast<std::size_t>((by - oy) / kSubBlock) * nb + (bx - ox) / kSubBlock];
            for (int y = by; y < by1; ++y) {
                for (int x = bx; x < bx1; ++x) {
                    Vec3 c;
                    const double t = blend_pixel<false>(splats, slots, x, y, c, nullptr);
                    c += t * background;
                    for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = std::clamp(c[ch], 0.0, 1.0);
                }
            }
        }
    }
}

// One pixel of the backward pass: the blend is recomputed with a record of its
// contributions, then walked back to front.
void backward_pixel(const std::vector<BlendSplat>& splats, const std::vector<std::uint32_t>& slots,
                    const Vec3& background, int x, int y, const Image& d_image, std::vector<Contribution>& record,
                    TileGrads& tg) {
    const Vec3 d_pix(d_image.at(x, y, 0), d_image.at(x, y, 1), d_image.at(x, y, 2));
    record.clear();
    Vec3 c;
    blend_pixel<true>(splats, slots, x, y, c, &record);
    for (const Contribution& r : record) tg.hit[r.slot] = 1;
    if (d_pix.isZero(0.0)) return;
    // back-to-front: `behind` is the normalized color seen through splat j
    Vec3 behind = background;
    for (auto it = record.rbegin(); it != record.rend(); ++it) {
        const BlendSplat& s = splats[it->slot];
        const double a = it->alpha, t = it->transmittance;
        tg.d_color[it->slot] += d_pix * (a * t);
        const double d_alpha = t * d_pix.dot(s.color - behind);
        behind = s.color * a + behind * (1.0 - a);

        tg.d_opacity[it->slot] += d_alpha * (a / s.opacity);
        const double d_power = d_alpha * a;
        const double dx = x - s.mx, dy = y - s.my;
        tg.d_mx[it->slot] += d_power * (s.ca * dx + s.cb * dy);
        tg.d_my[it->slot] += d_power * (s.cb * dx + s.cc * dy);
        tg.d_ca[it->slot] += d_power * (-0.5 * dx * dx);
        tg.d_cb[it->slot] += d_power * (-dx * dy);
        tg.d_cc[it->slot] += d_power * (-0.5 * dy * dy);
    }
}

// Backward pass over one tile.
void backward_tile(const Frame& f, const CameraPose& pose, const Vec3& background, int tile, const Image& d_image,
                   TileGrads& tg) {
    const int ts = f.bins.tile_size;
    const int tx = tile % f.bins.tiles_x, ty = tile / f.bins.tiles_x;
    const auto& list = f.bins.lists[tile];
    tg.resize(list.size());
    if (list.empty()) return;
    std::vector<BlendSplat> splats;
    gather_tile(f, list, splats);
    std::vector<Contribution> record;
    record.reserve(64);
    std::vector<std::vector<std::uint32_t>> blocks;
    const int ox = tx * ts, oy = ty * ts;
    bin_sub_blocks(splats, ox, oy, ts, blocks);
    const int nb = (ts + kSubBlock - 1) / kSubBlock;
    const int y_end = std::min(oy + ts, pose.height);
    const int x_end = std::min(ox + ts, pose.width);
    for (int by = oy; by < y_end; by += kSubBlock) {
        for (int bx = ox; bx < x_end; bx += kSubBlock) {
            const int bx1 = std::min(bx + kSubBlock, x_end), by1 = std::min(by + kSubBlock, y_end);
            const auto& slots = blocks[static_cast<std::size_t>((by - oy) / kSubBlock) * nb + (bx - ox) / kSubBlock];
            for (int y = by; y < by1; ++y) {
                for (int x = bx; x < bx1; ++x) {
                    backward_pixel(splats, slots, background, x, y, d_image, record, tg);
                }
            }
        }
    }
}

RenderGrads finish_backward(const GaussianCloud& cloud, const CameraPose& pose, const Frame& f,
                            const std::vector<TileGrads>& tile_grads) {
    // merge per-tile accumulators in ascending tile order
    const std::size_t ns = f.splats.size();
    TileGrads total;
    total.resize(ns);
    for (std::size_t tile = 0; tile < tile_grads.size(); ++tile) {
        const auto& list = f.bins.lists[tile];
        const TileGrads& tg = tile_grads[tile];
        for (std::size_t slot = 0; slot < list.size(); ++slot) {
            const std::uint32_t k = list[slot];
            total.d_mx[k] += tg.d_mx[slot];
            total.d_my[k] += tg.d_my[slot];
            total.d_ca[k] += tg.d_ca[slot];
            total.d_cb[k] += tg.d_cb[slot];
            total.d_cc[k] += tg.d_cc[slot];
            total.d_opacity[k] += tg.d_opacity[slot];
            total.d_color[k] += tg.d_color[slot];
            total.hit[k] |= tg.hit[slot];
        }
    }

    RenderGrads grads(cloud.size());
    for (std::size_t k = 0; k < ns; ++k) {
        const std::uint32_t i = f.splats[k].source_index;
        grads.participated[i] = total.hit[k] != 0;
        if (!total.hit[k]) continue;
        const BlendSplat& s = f.blend[k];
        // d cov = -K G K with G the symmetric conic gradient
        Mat2 kmat;
        kmat << s.ca, s.cb, s.cb, s.cc;
        Mat2 g;
        g << total.d_ca[k], 0.5 * total.d_cb[k], 0.5 * total.d_cb[k], total.d_cc[k];
        const Mat2 d_cov = -kmat * g * kmat;
        backprop_gaussian(cloud[i], pose, Vec2(total.d_mx[k], total.d_my[k]), d_cov, total.d_opacity[k],
                          total.d_color[k], grads, i);
    }
    return grads;
}

void check_d_image(const CameraPose& pose, const Image& d_image) {
    if (d_image.width != pose.width || d_image.height != pose.height ||
        d_image.size() != static_cast<std::size_t>(pose.width) * pose.height * 3) {
        throw InvalidArgument("d_image dimensions do not match the camera");
    }
}

} // namespace

RenderOutput render_with_stats(const GaussianCloud& cloud, const CameraPose& pose, const Vec3& background,
                               bool keep_state) {
    auto state = std::make_shared<ForwardState>();
    state->frame = prepare_frame(cloud, pose);
    const Frame& f = state->frame;
    RenderOutput out;
    out.image = Image(pose.width, pose.height);
    out.tile_entries = f.bins.total_entries();
    out.visible = f.splats.size();
    for_each_tile(static_cast<int>(f.bins.lists.size()),
                  [&](int tile) { forward_tile(f, pose, background, tile, out.image); });
    if (keep_state) {
        state->pose = pose;
        state->background = background;
        state->cloud_size = cloud.size();
        out.state = std::move(state);
    }
    return out;
}

Image render(const GaussianCloud& cloud, const CameraPose& pose, const Vec3& background) {
    return render_with_stats(cloud, pose, background).image;
}

RenderGrads render_backward(const GaussianCloud& cloud, const CameraPose& pose, const Vec3& background,
                            const Image& d_image) {
    check_d_image(pose, d_image);
    ForwardState state;
    state.pose = pose;
    state.background = background;
    state.cloud_size = cloud.size();
    state.frame = prepare_frame(cloud, pose);
    return render_backward(cloud, state, d_image);
}

RenderGrads render_backward(const GaussianCloud& cloud, const ForwardState& state, const Image& d_image) {
    check_d_image(state.pose, d_image);
    if (cloud.size() != state.cloud_size) throw InvalidArgument("cloud changed since the forward pass");
    const Frame& f = state.frame;
    const std::size_t n_tiles = f.bins.lists.size();
    std::vector<TileGrads> tile_grads(n_tiles);
    for_each_tile(static_cast<int>(n_tiles), [&](int tile) {
        backward_tile(f, state.pose, state.background, tile, d_image, tile_grads[tile]);
    });
    return finish_backward(cloud, state.pose, f, tile_grads);
}

} // namespace psplat

#pragma once

// Randomized oracle comparisons shared by the unit tests and the acceptance run:
// finite differences for every hand-written gradient, and the brute-force
// renderer for the tiled one.

#include "psplat/attack.hpp"
#include "psplat/loss.hpp"
#include "psplat/rasterizer.hpp"
#include "test_support.hpp"

#include <sstream>
#include <string>

namespace testing {

struct FdTally {
    int scenes = 0;
    int compared = 0;
    int failed = 0;
    std::string first_failure;

    void record(bool ok, const std::string& what) {
        ++compared;
        if (ok) return;
        if (failed == 0) first_failure = what;
        ++failed;
    }
};

inline double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

// 0.5 * |render - target|^2
inline double half_sq_error(const GaussianCloud& cloud, const CameraPose& pose, const Vec3& bg, const Image& target) {
    const Image img = render(cloud, pose, bg);
    double s = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) s += 0.5 * (img.data[i] - target.data[i]) * (img.data[i] - target.data[i]);
    return s;
}

// Packed parameter k of a Gaussian: mu(3) log_scale(3) opacity(1) rotation(4) color(3).
inline double* param(Gaussian& g, int k) {
    if (k < 3) return &g.mu[k];
    if (k < 6) return &g.log_scale[k - 3];
    if (k == 6) return &g.opacity_raw;
    if (k < 11) return &g.rotation[k - 7];
    return &g.color[k - 11];
}

inline double analytic(const RenderGrads& g, std::size_t i, int k) {
    if (k < 3) return g.d_mu[i][k];
    if (k < 6) return g.d_log_scale[i][k - 3];
    if (k == 6) return g.d_opacity_raw[i];
    if (k < 11) return g.d_rotation[i][k - 7];
    return g.d_color[i][k - 11];
}

// Every parameter of every Gaussian in `scenes` random 16x16 scenes of 1..10
// Gaussians, against central differences of 0.5 |render - target|^2.
inline FdTally render_fd_suite(std::uint64_t first_seed, int scenes, double rel = 1e-3, double floor = 1e-6) {
    const double h = 1e-6;
    FdTally tally;
    for (std::uint64_t seed = first_seed; seed < first_seed + static_cast<std::uint64_t>(scenes); ++seed) {
        Rng rng(seed);
        const int n = 1 + static_cast<int>(seed % 10);
        GaussianCloud cloud = random_cloud(rng, n);
        const CameraPose pose = look_at(Vec3(0.3, -3.0, 0.5), Vec3(0.0, 0.0, 0.1), 16, 16, 20.0);
        const Vec3 bg(0.05, 0.1, 0.02);
        const Image target = random_image(rng, 16, 16);
        Image d_image = render(cloud, pose, bg);
        for (std::size_t i = 0; i < d_image.size(); ++i) d_image.data[i] -= target.data[i];
        const RenderGrads grads = render_backward(cloud, pose, bg, d_image);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            for (int k = 0; k < kParamsPerGaussian; ++k) {
                GaussianCloud plus = cloud, minus = cloud;
                *param(plus[i], k) += h;
                *param(minus[i], k) -= h;
                const double fd =
                    (half_sq_error(plus, pose, bg, target) - half_sq_error(minus, pose, bg, target)) / (2 * h);
                const double an = analytic(grads, i, k);
                std::ostringstream what;
                what << "seed " << seed << " gaussian " << i << " param " << k << ": analytic " << an << " fd " << fd;
                tally.record(grad_close(an, fd, rel, floor), what.str());
            }
        }
        ++tally.scenes;
    }
    return tally;
}

// 25 sampled pixels of d(loss)/d(rendered) per random image pair, lambda swept over [0, 1).
inline FdTally loss_fd_suite(std::uint64_t first_seed, int scenes, double rel = 1e-3) {
    const double h = 1e-6;
    FdTally tally;
    for (std::uint64_t seed = first_seed; seed < first_seed + static_cast<std::uint64_t>(scenes); ++seed) {
        Rng rng(seed);
        const int w = 16;
        const int hgt = seed % 2 ? 16 : 11;
        const Image target = random_image(rng, w, hgt);
        const Image rendered = random_image(rng, w, hgt);
        const double lambda = 0.05 * static_cast<double>((seed - first_seed) % 20);
        const LossResult base = reconstruction_loss(rendered, target, lambda);
        std::uniform_int_distribution<std::size_t> pick(0, rendered.size() - 1);
        for (int k = 0; k < 25; ++k) {
            const std::size_t i = pick(rng);
            Image p = rendered, m = rendered;
            p.data[i] += h;
            m.data[i] -= h;
            const double fd =
                (reconstruction_loss(p, target, lambda).loss - reconstruction_loss(m, target, lambda).loss) / (2 * h);
            std::ostringstream what;
            what << "seed " << seed << " index " << i << ": analytic " << base.d_rendered.data[i] << " fd " << fd;
            tally.record(grad_close(base.d_rendered.data[i], fd, rel, 1e-8), what.str());
        }
        ++tally.scenes;
    }
    return tally;
}

// Direct per-term TV evaluation, independent of the library's loop order.
inline double tv_reference(const Image& img) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < img.height - 1; ++y) {
            for (int x = 0; x < img.width - 1; ++x) {
                const double dv = img.at(x, y + 1, c) - img.at(x, y, c);
                const double dh = img.at(x + 1, y, c) - img.at(x, y, c);
                s += std::sqrt(dv * dv + dh * dh + 1e-12);
            }
        }
    }
    return s;
}

// Every entry of tv_grad on random 8x8 images.
inline FdTally tv_fd_suite(std::uint64_t first_seed, int scenes, double rel = 1e-4) {
    const double h = 1e-6;
    FdTally tally;
    for (std::uint64_t seed = first_seed; seed < first_seed + static_cast<std::uint64_t>(scenes); ++seed) {
        Rng rng(seed);
        const Image img = random_image(rng, 8, 8);
        const Image g = tv_grad(img);
        for (std::size_t i = 0; i < img.size(); ++i) {
            Image p = img, m = img;
            p.data[i] += h;
            m.data[i] -= h;
            const double fd = (tv_reference(p) - tv_reference(m)) / (2 * h);
            std::ostringstream what;
            what << "seed " << seed << " index " << i << ": analytic " << g.data[i] << " fd " << fd;
            tally.record(grad_close(g.data[i], fd, rel, 1e-7), what.str());
        }
        ++tally.scenes;
    }
    return tally;
}

struct OracleTally {
    int scenes = 0;
    double max_diff = 0.0;
    bool in_range = true;
};

// Tiled render against the brute-force renderer on scenes up to 32x32, including
// Gaussians around and behind the camera and saturated transmittance.
inline OracleTally render_oracle_suite(std::uint64_t first_seed, int scenes) {
    const int sizes[][2] = {{32, 32}, {27, 19}, {16, 16}, {31, 9}, {1, 1}};
    OracleTally tally;
    for (std::uint64_t seed = first_seed; seed < first_seed + static_cast<std::uint64_t>(scenes); ++seed) {
        Rng rng(seed);
        const auto& wh = sizes[seed % 5];
        const int n = 1 + static_cast<int>(seed * 7 % 50);
        GaussianCloud cloud = random_cloud(rng, n, seed % 3 == 0 ? 3.5 : 0.8, -2.5, seed % 4 == 0 ? 0.0 : -1.0);
        if (seed % 5 == 1) {
            for (std::size_t i = 0; i < cloud.size(); ++i) cloud[i].opacity_raw = 6.0;
        }
        const CameraPose pose = look_at(Vec3(0.2, -3.0, 0.4), Vec3::Zero(), wh[0], wh[1], 0.9 * wh[0]);
        const Vec3 bg(0.1 * static_cast<double>(seed % 3), 0.5, 1.0);
        const Image tiled = render(cloud, pose, bg);
        tally.max_diff = std::max(tally.max_diff, max_abs_diff(tiled, brute_force_render(cloud, pose, bg)));
        for (double v : tiled.data) tally.in_range = tally.in_range && std::isfinite(v) && v >= 0.0 && v <= 1.0;
        ++tally.scenes;
    }
    return tally;
}

} // namespace testing

#pragma once

#include "psplat/gaussian.hpp"
#include "psplat/image.hpp"
#include "psplat/rasterizer.hpp"
#include "psplat/rng.hpp"
#include "psplat/scene_io.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <json.hpp>

namespace psplat {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-15;
inline constexpr double kSplitScaleDivisor = 1.6;
inline constexpr double kInitOpacity = 0.1;
inline constexpr double kResetOpacity = 0.01;

struct TrainConfig {
    int iterations = 3000;
    double lambda = 0.2;
    double lr_mu = 1.6e-4; // multiplied by the scene extent; halves by the last iteration
    double lr_scale = 5e-3;
    double lr_opacity = 5e-2;
    double lr_rotation = 1e-3;
    double lr_color = 2.5e-3;
    double tau_g = 0.0002;
    double tau_alpha = 0.005;
    double tau_s = 0.01; // fraction of the scene extent
    int densify_interval = 100; // 0 disables density control
    int densify_from = 500;
    std::optional<int> densify_until; // defaults to iterations / 2
    int opacity_reset_interval = 3000; // 0 disables
    std::optional<std::size_t> max_gaussians;
    int init_count = 2000;
    // Random init fills a cube of half-size ratio * scene_extent around the cameras' focus point.
    double init_extent_ratio = 0.35;
    int sh_degree = 0;
    std::uint64_t seed = 0;
    Vec3 background = Vec3::Zero();

    int resolved_densify_until() const { return densify_until.value_or(iterations / 2); }
    bool densify_enabled() const { return densify_interval > 0; }

    // Throws InvalidArgument on out-of-domain values.
    void validate() const;

    EIGEN_MAKE_ALIGNED_OPERATOR_NEW
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys take defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainRow {
    int iter = 0;
    double loss = 0.0;
    std::size_t n_gaussians = 0;
    double ms = 0.0;
    std::size_t mem_bytes = 0;
};

struct TrainRecord {
    std::vector<TrainRow> rows;
    double total_minutes = 0.0;

    void write_csv(std::ostream& out) const;
};

struct DensifyReport {
    std::size_t n_cloned = 0;
    std::size_t n_split = 0;
    std::size_t n_pruned = 0;
};

// Clone/split Gaussians whose mean view-space gradient exceeds tau_g, then prune
// those below tau_alpha opacity. Under max_gaussians the additions are limited to
// the headroom below the cap, highest gradient first. Statistics are reset.
DensifyReport densify_and_prune(GaussianCloud& cloud, const TrainConfig& config, double scene_extent, Rng& rng);

// Analytic training-memory proxy in bytes: parameters plus two Adam moments in
// fp32, two fp32 RGB frame buffers, and 12 bytes per (tile, splat) entry.
std::size_t memory_model(std::size_t n_gaussians, int sh_degree, int width, int height, std::size_t tile_entries);
std::size_t memory_model(const GaussianCloud& cloud, int width, int height, std::size_t tile_entries);

// Random initialization inside the scene box (see TrainConfig::init_extent_ratio).
GaussianCloud initialize_cloud(const Dataset& dataset, const TrainConfig& config, double scene_extent, Rng& rng);

struct StepResult {
    double loss = 0.0;
    Image rendered;
    std::size_t tile_entries = 0;
    std::optional<DensifyReport> densify;
};

// One Gaussian model under optimization. Owns the iteration counter that drives
// the learning-rate decay and the density-control schedule.
class Trainer {
public:
    Trainer(TrainConfig config, double scene_extent, GaussianCloud cloud, Rng rng);

    // Render, loss against target, backward, Adam, statistics, scheduled density control.
    StepResult step(const Image& target, const CameraPose& pose);

    // Forward only, with the training background.
    Image render_view(const CameraPose& pose) const;

    // Starts the schedule (lr decay, density control) over from iteration 0.
    void restart_schedule() { iteration_ = 0; }

    int iteration() const { return iteration_; }
    double scene_extent() const { return scene_extent_; }
    const TrainConfig& config() const { return config_; }
    const GaussianCloud& cloud() const { return cloud_; }
    GaussianCloud& cloud() { return cloud_; }
    GaussianCloud take_cloud() { return std::move(cloud_); }

private:
    void adam_update(const RenderGrads& grads);

    TrainConfig config_;
    double scene_extent_;
    GaussianCloud cloud_;
    Rng rng_;
    int iteration_ = 0;
};

// Shuffled-epoch view sampler: every view is visited once per epoch.
class ViewSampler {
public:
    ViewSampler(std::size_t n_views, Rng rng) : n_(n_views), rng_(std::move(rng)) {}
    std::size_t next();

private:
    std::size_t n_;
    Rng rng_;
    std::vector<std::size_t> pending_;
};

// Extent used for learning rates and split thresholds; falls back to 1 for a
// degenerate (single camera) rig.
double training_extent(const Dataset& dataset);

struct TrainResult {
    GaussianCloud cloud;
    TrainRecord record;
};

// Full optimization. Throws InvalidArgument for an empty dataset or mismatched views.
TrainResult train(const Dataset& dataset, const TrainConfig& config);

} // namespace psplat

#pragma once

#include "psplat/gaussian.hpp"
#include "psplat/image.hpp"
#include "psplat/scene_io.hpp"
#include "psplat/trainer.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace psplat {

inline constexpr double kPsnrCeilingDb = 99.0;
inline constexpr int kDefaultFpsRepeats = 5;

struct CostMetrics {
    std::size_t peak_mem_bytes = 0;
    double total_minutes = 0.0;
    std::size_t final_gaussians = 0;
    double render_fps = 0.0;
    double final_psnr_db = 0.0;
    double final_loss = 0.0;

    static void write_csv_header(std::ostream& out);
    void write_csv_row(std::ostream& out) const;
};

// Reads a one-row CostMetrics CSV written by write_csv_header/write_csv_row.
CostMetrics read_cost_metrics_csv(std::istream& in);

// PSNR with MAX = 1; zero MSE reports the 99 dB ceiling.
double psnr(const Image& rendered, const Image& target);

// Mean PSNR of the model's renders against every dataset view.
double mean_psnr(const GaussianCloud& model, const Dataset& dataset, const Vec3& background);

// Throws InvalidArgument for an empty record.
CostMetrics summarize(const TrainRecord& record, const GaussianCloud& model, const Dataset& dataset,
                      const Vec3& background = Vec3::Zero(), int fps_repeats = kDefaultFpsRepeats);

// Median over repeats of (poses rendered / wall seconds).
double fps_benchmark(const GaussianCloud& model, std::span<const CameraPose> poses, int repeats = kDefaultFpsRepeats);

struct Correlation {
    double pearson = 0.0;
    double spearman = 0.0;
};

// Pearson and Spearman (average ranks for ties). Needs >= 3 equal-length,
// non-constant series; throws InvalidArgument otherwise.
Correlation correlate(std::span<const double> xs, std::span<const double> ys);

struct SweepRow {
    std::size_t count = 0;
    std::size_t mem_bytes = 0;
    double ms_per_iter = 0.0;
    double fps = 0.0;
};

// For each (ascending) count: the first `count` Gaussians of one random cloud
// sized for the largest count, `iterations` timed training steps with density
// control off, memory model and FPS.
std::vector<SweepRow> sweep_gaussians_vs_cost(const Dataset& scene, std::span<const std::size_t> counts,
                                              int iterations = 50, std::uint64_t seed = 0);

void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& out);

} // namespace psplat

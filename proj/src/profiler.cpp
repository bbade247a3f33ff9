#include "psplat/profiler.hpp"

#include "psplat/rasterizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace psplat {

void CostMetrics::write_csv_header(std::ostream& out) {
    out << "peak_mem_bytes,total_minutes,final_gaussians,render_fps,final_psnr_db,final_loss\n";
}

void CostMetrics::write_csv_row(std::ostream& out) const {
    const auto old = out.precision(10);
    out << peak_mem_bytes << ',' << total_minutes << ',' << final_gaussians << ',' << render_fps << ','
        << final_psnr_db << ',' << final_loss << '\n';
    out.precision(old);
}

CostMetrics read_cost_metrics_csv(std::istream& in) {
    std::string header, row;
    if (!std::getline(in, header) || !std::getline(in, row)) throw IoError("metrics CSV needs a header and one row");
    std::vector<std::string> cols;
    std::stringstream ss(row);
    for (std::string cell; std::getline(ss, cell, ',');) cols.push_back(cell);
    if (cols.size() != 6) throw IoError("metrics CSV row must have 6 columns");
    CostMetrics m;
    try {
        m.peak_mem_bytes = std::stoull(cols[0]);
        m.total_minutes = std::stod(cols[1]);
        m.final_gaussians = std::stoull(cols[2]);
        m.render_fps = std::stod(cols[3]);
        m.final_psnr_db = std::stod(cols[4]);
        m.final_loss = std::stod(cols[5]);
    } catch (const std::logic_error&) {
        throw IoError("metrics CSV row is not numeric");
    }
    return m;
}

double psnr(const Image& rendered, const Image& target) {
    if (!rendered.same_shape(target) || rendered.size() != target.size() || rendered.size() == 0) {
        throw InvalidArgument("image dimensions do not match");
    }
    double se = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const double d = rendered.data[i] - target.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(rendered.size());
    if (mse <= 0.0) return kPsnrCeilingDb;
    return std::min(kPsnrCeilingDb, -10.0 * std::log10(mse));
}

double mean_psnr(const GaussianCloud& model, const Dataset& dataset, const Vec3& background) {
    if (dataset.views.empty()) throw InvalidArgument("dataset has no views");
    double sum = 0.0;
    for (const auto& v : dataset.views) sum += psnr(render(model, v.pose, background), v.image);
    return sum / static_cast<double>(dataset.size());
}

double fps_benchmark(const GaussianCloud& model, std::span<const CameraPose> poses, int repeats) {
    if (poses.empty()) throw InvalidArgument("fps benchmark needs at least one pose");
    if (repeats < 1) throw InvalidArgument("fps benchmark needs at least one repeat");
    using clock = std::chrono::steady_clock;
    std::vector<double> fps;
    const Vec3 bg = Vec3::Zero();
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = clock::now();
        for (const auto& p : poses) {
            const Image img = render(model, p, bg);
            if (img.size() == 0) throw InvalidArgument("empty render");
        }
        const double secs = std::max(std::chrono::duration<double>(clock::now() - t0).count(), 1e-9);
        fps.push_back(static_cast<double>(poses.size()) / secs);
    }
    std::sort(fps.begin(), fps.end());
    const std::size_t n = fps.size();
    return n % 2 ? fps[n / 2] : 0.5 * (fps[n / 2 - 1] + fps[n / 2]);
}

CostMetrics summarize(const TrainRecord& record, const GaussianCloud& model, const Dataset& dataset,
                      const Vec3& background, int fps_repeats) {
    if (record.rows.empty()) throw InvalidArgument("train record is empty");
    CostMetrics m;
    for (const auto& r : record.rows) m.peak_mem_bytes = std::max(m.peak_mem_bytes, r.mem_bytes);
    m.total_minutes = record.total_minutes;
    m.final_gaussians = model.size();
    m.final_loss = record.rows.back().loss;
    m.final_psnr_db = mean_psnr(model, dataset, background);
    std::vector<CameraPose> poses;
    for (const auto& v : dataset.views) poses.push_back(v.pose);
    m.render_fps = fps_benchmark(model, poses, fps_repeats);
    return m;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw InvalidArgument("correlation undefined for a constant series");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

} // namespace

Correlation correlate(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw InvalidArgument("correlation needs equal-length series");
    if (xs.size() < 3) throw InvalidArgument("correlation needs at least 3 points");
    Correlation c;
    c.pearson = pearson(xs, ys);
    const auto rx = ranks(xs), ry = ranks(ys);
    c.spearman = pearson(rx, ry);
    return c;
}

std::vector<SweepRow> sweep_gaussians_vs_cost(const Dataset& scene, std::span<const std::size_t> counts,
                                              int iterations, std::uint64_t seed) {
    scene.validate();
    if (iterations < 1) throw InvalidArgument("sweep needs at least one iteration");
    if (!std::is_sorted(counts.begin(), counts.end())) throw InvalidArgument("sweep counts must be ascending");
    const double extent = training_extent(scene);
    std::vector<CameraPose> poses;
    for (const auto& v : scene.views) poses.push_back(v.pose);

    // Every row trains a prefix of one random cloud, so the rows differ only in
    // how many of the same Gaussians they hold.
    TrainConfig base;
    base.iterations = iterations;
    base.init_count = counts.empty() ? 0 : static_cast<int>(counts.back());
    base.densify_interval = 0;
    base.opacity_reset_interval = 0;
    base.seed = seed;
    Rng init_rng = make_rng(seed, "sweep.init");
    const GaussianCloud largest = initialize_cloud(scene, base, extent, init_rng);

    std::vector<SweepRow> rows;
    using clock = std::chrono::steady_clock;
    for (std::size_t count : counts) {
        TrainConfig cfg = base;
        cfg.init_count = static_cast<int>(count);
        GaussianCloud cloud = largest;
        std::vector<bool> mask(largest.size(), false);
        std::fill_n(mask.begin(), std::min(count, mask.size()), true);
        cloud.keep(mask);
        Trainer trainer(cfg, extent, std::move(cloud), make_rng(seed, "sweep.densify"));
        ViewSampler sampler(scene.size(), make_rng(seed, "sweep.views"));

        std::size_t tile_entries = 0;
        int w = 0, h = 0;
        const auto t0 = clock::now();
        for (int it = 0; it < iterations; ++it) {
            const View& v = scene.views[sampler.next()];
            tile_entries = trainer.step(v.image, v.pose).tile_entries;
            w = v.pose.width;
            h = v.pose.height;
        }
        const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count() / iterations;
        SweepRow row;
        row.count = trainer.cloud().size();
        row.mem_bytes = memory_model(trainer.cloud(), w, h, tile_entries);
        row.ms_per_iter = ms;
        row.fps = fps_benchmark(trainer.cloud(), poses, 3);
        rows.push_back(row);
    }
    return rows;
}

void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& out) {
    out << "count,mem_bytes,ms_per_iter,fps\n";
    const auto old = out.precision(10);
    for (const auto& r : rows) out << r.count << ',' << r.mem_bytes << ',' << r.ms_per_iter << ',' << r.fps << '\n';
    out.precision(old);
}

} // namespace psplat

#include "psplat/trainer.hpp"

#include "psplat/loss.hpp"
#include "psplat/rasterizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>

namespace psplat {

using nlohmann::json;

void TrainConfig::validate() const {
    if (iterations < 0) throw InvalidArgument("iterations must be non-negative");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must lie in [0,1]");
    if (!(tau_g > 0.0)) throw InvalidArgument("tau_g must be positive");
    if (!(tau_alpha >= 0.0 && tau_alpha < 1.0)) throw InvalidArgument("tau_alpha must lie in [0,1)");
    if (!(tau_s > 0.0)) throw InvalidArgument("tau_s must be positive");
    for (double lr : {lr_mu, lr_scale, lr_opacity, lr_rotation, lr_color}) {
        if (!(lr > 0.0)) throw InvalidArgument("learning rates must be positive");
    }
    if (densify_interval < 0) throw InvalidArgument("densify_interval must be non-negative");
    if (opacity_reset_interval < 0) throw InvalidArgument("opacity_reset_interval must be non-negative");
    if (iterations > 0 && densify_enabled()) {
        const int until = resolved_densify_until();
        if (!(densify_from < until && until <= iterations)) {
            throw InvalidArgument("densify schedule needs densify_from < densify_until <= iterations");
        }
    }
    if (init_count < 0) throw InvalidArgument("init_count must be non-negative");
    if (max_gaussians && *max_gaussians == 0) throw InvalidArgument("max_gaussians must be positive");
    if (!(init_extent_ratio > 0.0)) throw InvalidArgument("init_extent_ratio must be positive");
    if (sh_degree < 0 || sh_degree > 3) throw InvalidArgument("sh_degree must lie in [0,3]");
    if (!background.allFinite() || background.minCoeff() < 0.0 || background.maxCoeff() > 1.0) {
        throw InvalidArgument("background must lie in [0,1]");
    }
}

json to_json(const TrainConfig& c) {
    json j = {{"iterations", c.iterations},
              {"lambda", c.lambda},
              {"lr_mu", c.lr_mu},
              {"lr_scale", c.lr_scale},
              {"lr_opacity", c.lr_opacity},
              {"lr_rotation", c.lr_rotation},
              {"lr_color", c.lr_color},
              {"tau_g", c.tau_g},
              {"tau_alpha", c.tau_alpha},
              {"tau_s", c.tau_s},
              {"densify_interval", c.densify_interval},
              {"densify_from", c.densify_from},
              {"densify_until", c.resolved_densify_until()},
              {"opacity_reset_interval", c.opacity_reset_interval},
              {"max_gaussians", c.max_gaussians ? json(*c.max_gaussians) : json(nullptr)},
              {"init_count", c.init_count},
              {"init_extent_ratio", c.init_extent_ratio},
              {"sh_degree", c.sh_degree},
              {"seed", c.seed},
              {"background", {c.background.x(), c.background.y(), c.background.z()}}};
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    static const std::set<std::string> known = {
        "iterations", "lambda", "lr_mu", "lr_scale", "lr_opacity", "lr_rotation", "lr_color",
        "tau_g", "tau_alpha", "tau_s", "densify_interval", "densify_from", "densify_until",
        "opacity_reset_interval", "max_gaussians", "init_count", "init_extent_ratio", "sh_degree", "seed",
        "background"};
    if (!j.is_object()) throw InvalidArgument("train config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw InvalidArgument("unknown train config key: " + key);
    }
    TrainConfig c;
    try {
        c.iterations = j.value("iterations", c.iterations);
        c.lambda = j.value("lambda", c.lambda);
        c.lr_mu = j.value("lr_mu", c.lr_mu);
        c.lr_scale = j.value("lr_scale", c.lr_scale);
        c.lr_opacity = j.value("lr_opacity", c.lr_opacity);
        c.lr_rotation = j.value("lr_rotation", c.lr_rotation);
        c.lr_color = j.value("lr_color", c.lr_color);
        c.tau_g = j.value("tau_g", c.tau_g);
        c.tau_alpha = j.value("tau_alpha", c.tau_alpha);
        c.tau_s = j.value("tau_s", c.tau_s);
        c.densify_interval = j.value("densify_interval", c.densify_interval);
        c.densify_from = j.value("densify_from", c.densify_from);
        if (j.contains("densify_until") && !j["densify_until"].is_null()) c.densify_until = j["densify_until"].get<int>();
        c.opacity_reset_interval = j.value("opacity_reset_interval", c.opacity_reset_interval);
        if (j.contains("max_gaussians") && !j["max_gaussians"].is_null()) {
            c.max_gaussians = j["max_gaussians"].get<std::size_t>();
        }
        c.init_count = j.value("init_count", c.init_count);
        c.init_extent_ratio = j.value("init_extent_ratio", c.init_extent_ratio);
        c.sh_degree = j.value("sh_degree", c.sh_degree);
        c.seed = j.value("seed", c.seed);
        if (j.contains("background")) {
            const auto& b = j["background"];
            c.background = Vec3(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>());
        }
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed train config: ") + e.what());
    }
    c.validate();
    return c;
}

void TrainRecord::write_csv(std::ostream& out) const {
    out << "iter,loss,n_gaussians,ms,mem_bytes\n";
    const auto old = out.precision(17);
    for (const auto& r : rows) {
        out << r.iter << ',' << r.loss << ',' << r.n_gaussians << ',' << std::setprecision(6) << r.ms
            << std::setprecision(17) << ',' << r.mem_bytes << '\n';
    }
    out.precision(old);
}

std::size_t memory_model(std::size_t n_gaussians, int sh_degree, int width, int height, std::size_t tile_entries) {
    const std::size_t floats_per_gaussian = 3 + 3 + 1 + 4 + static_cast<std::size_t>(color_coefficient_count(sh_degree));
    const std::size_t params = n_gaussians * floats_per_gaussian * 4 * 3;
    const std::size_t frame = static_cast<std::size_t>(width) * height * 3 * 4 * 2;
    const std::size_t tiles = tile_entries * 12;
    return params + frame + tiles;
}

std::size_t memory_model(const GaussianCloud& cloud, int width, int height, std::size_t tile_entries) {
    return memory_model(cloud.size(), cloud.sh_degree(), width, height, tile_entries);
}

namespace {

// sqrt of the mean squared distance to the 3 nearest neighbours, per point,
// using a uniform grid over the points' bounding box.
std::vector<double> knn3_distance(const std::vector<Vec3>& pts) {
    const std::size_t n = pts.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) {
        std::fill(out.begin(), out.end(), 0.01);
        return out;
    }
    Vec3 lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const int cells = std::max(1, static_cast<int>(std::cbrt(static_cast<double>(n) / 2.0)));
    const Vec3 span = (hi - lo).cwiseMax(1e-12);
    const double h = span.maxCoeff() / cells;
    const Eigen::Vector3i dims = (span / h).array().ceil().cast<int>().cwiseMax(1);
    auto cell_of = [&](const Vec3& p) {
        Eigen::Vector3i c = ((p - lo) / h).array().floor().cast<int>();
        return c.cwiseMax(0).cwiseMin(dims - Eigen::Vector3i::Ones());
    };
    auto flat = [&](const Eigen::Vector3i& c) {
        return (static_cast<std::size_t>(c.z()) * dims.y() + c.y()) * dims.x() + c.x();
    };
    std::vector<std::vector<std::uint32_t>> grid(static_cast<std::size_t>(dims.x()) * dims.y() * dims.z());
    for (std::size_t i = 0; i < n; ++i) grid[flat(cell_of(pts[i]))].push_back(static_cast<std::uint32_t>(i));

    const int max_r = dims.maxCoeff();
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3i c = cell_of(pts[i]);
        std::array<double, 3> best{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                                   std::numeric_limits<double>::infinity()};
        auto offer = [&](double d2) {
            if (d2 >= best[2]) return;
            best[2] = d2;
            if (best[2] < best[1]) std::swap(best[2], best[1]);
            if (best[1] < best[0]) std::swap(best[1], best[0]);
        };
        for (int r = 0; r <= max_r; ++r) {
            for (int z = c.z() - r; z <= c.z() + r; ++z) {
                for (int y = c.y() - r; y <= c.y() + r; ++y) {
                    for (int x = c.x() - r; x <= c.x() + r; ++x) {
                        if (std::max({std::abs(x - c.x()), std::abs(y - c.y()), std::abs(z - c.z())}) != r) continue;
                        if (x < 0 || y < 0 || z < 0 || x >= dims.x() || y >= dims.y() || z >= dims.z()) continue;
                        for (std::uint32_t j : grid[flat({x, y, z})]) {
                            if (j != i) offer((pts[j] - pts[i]).squaredNorm());
                        }
                    }
                }
            }
            // anything in shell r+1 is at least r*h away
            if (std::isfinite(best[2]) && best[2] <= (r * h) * (r * h)) break;
        }
        double sum = 0.0;
        int k = 0;
        for (double b : best) {
            if (std::isfinite(b)) {
                sum += b;
                ++k;
            }
        }
        out[i] = std::sqrt(std::max(sum / std::max(k, 1), 1e-14));
    }
    return out;
}

} // namespace

GaussianCloud initialize_cloud(const Dataset& dataset, const TrainConfig& config, double scene_extent, Rng& rng) {
    std::size_t count = static_cast<std::size_t>(config.init_count);
    if (config.max_gaussians) count = std::min(count, *config.max_gaussians);
    const Vec3 center = dataset.focus_point();
    const double half = config.init_extent_ratio * scene_extent;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<Vec3> pts(count);
    std::vector<Vec3> colors(count);
    for (std::size_t i = 0; i < count; ++i) {
        pts[i] = center + half * Vec3(2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0);
        colors[i] = Vec3(unit(rng), unit(rng), unit(rng));
    }
    const std::vector<double> dist = knn3_distance(pts);

    GaussianCloud cloud(config.sh_degree);
    cloud.reserve(count);
    const int rest = color_coefficient_count(config.sh_degree) - 3;
    for (std::size_t i = 0; i < count; ++i) {
        Gaussian g;
        g.mu = pts[i];
        g.log_scale = Vec3::Constant(std::log(dist[i]));
        g.opacity_raw = logit(kInitOpacity);
        g.rotation = Vec4(1.0, 0.0, 0.0, 0.0);
        g.color = colors[i];
        g.sh_rest.assign(static_cast<std::size_t>(rest), 0.0);
        cloud.push_back(std::move(g));
    }
    return cloud;
}

DensifyReport densify_and_prune(GaussianCloud& cloud, const TrainConfig& config, double scene_extent, Rng& rng) {
    DensifyReport report;
    const std::size_t n0 = cloud.size();

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n0; ++i) {
        if (cloud.stats(i).mean() > config.tau_g) candidates.push_back(i);
    }
    if (config.max_gaussians) {
        const std::size_t headroom = *config.max_gaussians > n0 ? *config.max_gaussians - n0 : 0;
        if (candidates.size() > headroom) {
            std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
                return cloud.stats(a).mean() > cloud.stats(b).mean();
            });
            candidates.resize(headroom);
            std::sort(candidates.begin(), candidates.end());
        }
    }

    const double split_threshold = config.tau_s * scene_extent;
    std::vector<std::size_t> to_clone, to_split;
    for (std::size_t i : candidates) {
        if (cloud[i].log_scale.array().exp().maxCoeff() > split_threshold) {
            to_split.push_back(i);
        } else {
            to_clone.push_back(i);
        }
    }

    for (std::size_t i : to_clone) {
        Gaussian copy = cloud[i];
        cloud.push_back(std::move(copy));
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<bool> keep(n0 + to_clone.size(), true);
    for (std::size_t i : to_split) {
        const Gaussian parent = cloud[i];
        const Mat3 r = quaternion_to_rotation(parent.rotation);
        const Vec3 scales = parent.log_scale.array().exp();
        for (int child = 0; child < 2; ++child) {
            Gaussian g = parent;
            const Vec3 z(normal(rng), normal(rng), normal(rng));
            g.mu = parent.mu + r * scales.cwiseProduct(z);
            g.log_scale = parent.log_scale.array() - std::log(kSplitScaleDivisor);
            cloud.push_back(std::move(g));
            keep.push_back(true);
        }
        keep[i] = false;
    }
    report.n_cloned = to_clone.size();
    report.n_split = to_split.size();
    cloud.keep(keep);

    std::vector<bool> survive(cloud.size(), true);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (sigmoid(cloud[i].opacity_raw) < config.tau_alpha) {
            survive[i] = false;
            ++report.n_pruned;
        }
    }
    if (report.n_pruned > 0) cloud.keep(survive);
    cloud.reset_stats();
    return report;
}

Trainer::Trainer(TrainConfig config, double scene_extent, GaussianCloud cloud, Rng rng)
    : config_(std::move(config)), scene_extent_(scene_extent), cloud_(std::move(cloud)), rng_(std::move(rng)) {
    config_.validate();
    if (!(scene_extent_ > 0.0)) throw InvalidArgument("scene extent must be positive");
}

Image Trainer::render_view(const CameraPose& pose) const { return render(cloud_, pose, config_.background); }

void Trainer::adam_update(const RenderGrads& grads) {
    ++cloud_.adam_step;
    const double t = static_cast<double>(cloud_.adam_step);
    const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
    const double horizon = std::max(1, config_.iterations);
    const double decay = std::pow(0.5, std::min(1.0, iteration_ / horizon));
    const double lr_mu = config_.lr_mu * scene_extent_ * decay;

    std::array<double, kParamsPerGaussian> lr{};
    std::fill_n(lr.begin(), 3, lr_mu);
    std::fill_n(lr.begin() + 3, 3, config_.lr_scale);
    lr[6] = config_.lr_opacity;
    std::fill_n(lr.begin() + 7, 4, config_.lr_rotation);
    std::fill_n(lr.begin() + 11, 3, config_.lr_color);

    for (std::size_t i = 0; i < cloud_.size(); ++i) {
        std::array<double, kParamsPerGaussian> g;
        for (int k = 0; k < 3; ++k) g[k] = grads.d_mu[i][k];
        for (int k = 0; k < 3; ++k) g[3 + k] = grads.d_log_scale[i][k];
        g[6] = grads.d_opacity_raw[i];
        for (int k = 0; k < 4; ++k) g[7 + k] = grads.d_rotation[i][k];
        for (int k = 0; k < 3; ++k) g[11 + k] = grads.d_color[i][k];

        AdamMoments& mom = cloud_.moments(i);
        std::array<double, kParamsPerGaussian> step;
        for (int k = 0; k < kParamsPerGaussian; ++k) {
            mom.m[k] = kAdamBeta1 * mom.m[k] + (1.0 - kAdamBeta1) * g[k];
            mom.v[k] = kAdamBeta2 * mom.v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
            step[k] = lr[k] * (mom.m[k] / bc1) / (std::sqrt(mom.v[k] / bc2) + kAdamEps);
        }
        Gaussian& gs = cloud_[i];
        for (int k = 0; k < 3; ++k) gs.mu[k] -= step[k];
        for (int k = 0; k < 3; ++k) gs.log_scale[k] -= step[3 + k];
        gs.opacity_raw -= step[6];
        for (int k = 0; k < 4; ++k) gs.rotation[k] -= step[7 + k];
        for (int k = 0; k < 3; ++k) gs.color[k] -= step[11 + k];
    }
}

StepResult Trainer::step(const Image& target, const CameraPose& pose) {
    ++iteration_;
    StepResult out;
    RenderOutput fwd = render_with_stats(cloud_, pose, config_.background, true);
    LossResult loss = reconstruction_loss(fwd.image, target, config_.lambda);
    const RenderGrads grads = render_backward(cloud_, *fwd.state, loss.d_rendered);
    fwd.state.reset();
    adam_update(grads);

    const int until = config_.resolved_densify_until();
    if (iteration_ < until) {
        for (std::size_t i = 0; i < cloud_.size(); ++i) {
            if (!grads.participated[i]) continue;
            cloud_.stats(i).grad_accum += grads.d_mean2d_norm[i];
            cloud_.stats(i).views += 1;
        }
        if (config_.densify_enabled() && iteration_ > config_.densify_from && iteration_ % config_.densify_interval == 0) {
            out.densify = densify_and_prune(cloud_, config_, scene_extent_, rng_);
        }
        if (config_.opacity_reset_interval > 0 && iteration_ % config_.opacity_reset_interval == 0) {
            const double reset = logit(kResetOpacity);
            for (std::size_t i = 0; i < cloud_.size(); ++i) {
                cloud_[i].opacity_raw = std::min(cloud_[i].opacity_raw, reset);
                cloud_.moments(i).m[6] = 0.0;
                cloud_.moments(i).v[6] = 0.0;
            }
        }
    }
    out.loss = loss.loss;
    out.rendered = std::move(fwd.image);
    out.tile_entries = fwd.tile_entries;
    return out;
}

std::size_t ViewSampler::next() {
    if (pending_.empty()) {
        pending_.resize(n_);
        std::iota(pending_.begin(), pending_.end(), std::size_t{0});
        std::shuffle(pending_.begin(), pending_.end(), rng_);
    }
    const std::size_t k = pending_.back();
    pending_.pop_back();
    return k;
}

double training_extent(const Dataset& dataset) {
    const double e = dataset.scene_extent();
    return e > 1e-9 ? e : 1.0;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config) {
    dataset.validate();
    config.validate();
    const double extent = training_extent(dataset);
    Rng init_rng = make_rng(config.seed, "trainer.init");
    GaussianCloud cloud = initialize_cloud(dataset, config, extent, init_rng);
    Trainer trainer(config, extent, std::move(cloud), make_rng(config.seed, "trainer.densify"));
    ViewSampler sampler(dataset.size(), make_rng(config.seed, "trainer.views"));

    TrainRecord record;
    record.rows.reserve(static_cast<std::size_t>(config.iterations));
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    for (int it = 1; it <= config.iterations; ++it) {
        const auto t0 = clock::now();
        const View& v = dataset.views[sampler.next()];
        const StepResult s = trainer.step(v.image, v.pose);
        const auto t1 = clock::now();
        TrainRow row;
        row.iter = it;
        row.loss = s.loss;
        row.n_gaussians = trainer.cloud().size();
        row.ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        row.mem_bytes = memory_model(trainer.cloud(), v.pose.width, v.pose.height, s.tile_entries);
        record.rows.push_back(row);
    }
    record.total_minutes = std::chrono::duration<double>(clock::now() - start).count() / 60.0;
    return {trainer.take_cloud(), std::move(record)};
}

} // namespace psplat

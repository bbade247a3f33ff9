#pragma once

#include "psplat/image.hpp"
#include "psplat/scene_io.hpp"
#include "psplat/trainer.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace psplat {

inline constexpr double kTvSmoothing = 1e-12;

// L-infinity budget; nullopt means unbounded.
using Epsilon = std::optional<double>;

struct AttackConfig {
    Epsilon epsilon = 16.0 / 255.0;
    std::optional<double> eta; // default: epsilon / 10, or 4/255 when unbounded
    int outer_iterations = 3000; // T
    int inner_steps = 10;        // T_tilde
    TrainConfig proxy;
    std::uint64_t seed = 0;

    double resolved_eta() const;
    void validate() const;
};

nlohmann::json to_json(const AttackConfig& c);
AttackConfig attack_config_from_json(const nlohmann::json& j);

// The `attack.json` sidecar: {epsilon, eta, T, T_tilde, seed}; epsilon null when unbounded.
nlohmann::json attack_sidecar(const AttackConfig& c);

// Parses "16/255", "0.0627", "inf"/"unbounded".
Epsilon parse_epsilon(const std::string& text);

struct PoisonedDataset {
    Dataset dataset;
    std::string clean_name;
    AttackConfig config;
};

struct AttackLogRow {
    int t = 0;
    std::size_t view = 0;
    std::size_t proxy_gaussians = 0;
    double tv_score = 0.0;
};

struct AttackLog {
    std::size_t initial_proxy_gaussians = 0; // after clean proxy training, before t = 1
    std::vector<AttackLogRow> rows;

    void write_csv(std::ostream& out) const;
};

struct PoisonResult {
    PoisonedDataset poisoned;
    AttackLog log;
};

// Sum over channels of sqrt(dv^2 + dh^2 + 1e-12) with forward differences;
// the last row and column have no term of their own.
double tv_score(const Image& img);

// Exact gradient of tv_score.
Image tv_grad(const Image& img);

// Clamp into [clean - eps, clean + eps] (skipped when unbounded), then into [0,1].
Image project_epsilon(const Image& poisoned, const Image& clean, const Epsilon& epsilon);

// `steps` rounds of x <- P(x + eta sign(grad TV(x))). Returns the projected iterate
// with the highest TV score; `start` competes too when `include_start` is set.
Image tv_sign_ascent(const Image& start, const Image& clean, const Epsilon& epsilon, double eta, int steps,
                     bool include_start);

// Proxy-guided poisoning: clean proxy training, then T rounds of
// render -> TV ascent within the budget -> one proxy step towards the result.
PoisonResult poison_splat(const Dataset& clean, const AttackConfig& config);

// Per-view TV ascent from the clean image, T * T_tilde / N steps per view, no proxy.
PoisonedDataset naive_tv_attack(const Dataset& clean, const AttackConfig& config);

// Largest |poisoned - clean| over all views, pixels and channels.
double max_perturbation(const Dataset& poisoned, const Dataset& clean);

// Poses (and on-disk transforms) identical bit for bit.
bool poses_identical(const Dataset& a, const Dataset& b);

} // namespace psplat

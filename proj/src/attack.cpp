#include "psplat/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <ostream>
#include <set>

namespace psplat {

using nlohmann::json;

double AttackConfig::resolved_eta() const {
    if (eta) return *eta;
    if (!epsilon) return 4.0 / 255.0;
    return *epsilon > 0.0 ? *epsilon / 10.0 : 1.0 / 255.0;
}

void AttackConfig::validate() const {
    if (epsilon && !(*epsilon >= 0.0)) throw InvalidArgument("epsilon must be non-negative");
    const double e = resolved_eta();
    if (!(e > 0.0 && e <= 1.0)) throw InvalidArgument("eta must lie in (0,1]");
    if (outer_iterations < 1) throw InvalidArgument("T must be at least 1");
    if (inner_steps < 1) throw InvalidArgument("T_tilde must be at least 1");
    proxy.validate();
}

Epsilon parse_epsilon(const std::string& text) {
    if (text == "inf" || text == "unbounded" || text == "infinity") return std::nullopt;
    try {
        std::size_t pos = 0;
        const double num = std::stod(text, &pos);
        if (pos == text.size()) {
            if (!(num >= 0.0)) throw InvalidArgument("epsilon must be non-negative: " + text);
            return num;
        }
        if (text[pos] == '/') {
            std::size_t pos2 = 0;
            const std::string rest = text.substr(pos + 1);
            const double den = std::stod(rest, &pos2);
            if (pos2 == rest.size() && den > 0.0 && num >= 0.0) return num / den;
        }
    } catch (const std::logic_error&) {
    }
    throw InvalidArgument("cannot parse epsilon: " + text);
}

json to_json(const AttackConfig& c) {
    return {{"epsilon", c.epsilon ? json(*c.epsilon) : json(nullptr)},
            {"eta", c.resolved_eta()},
            {"T", c.outer_iterations},
            {"T_tilde", c.inner_steps},
            {"seed", c.seed},
            {"proxy", to_json(c.proxy)}};
}

AttackConfig attack_config_from_json(const json& j) {
    static const std::set<std::string> known = {"epsilon", "eta", "T", "T_tilde", "seed", "proxy"};
    if (!j.is_object()) throw InvalidArgument("attack config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw InvalidArgument("unknown attack config key: " + key);
    }
    AttackConfig c;
    try {
        if (j.contains("epsilon")) {
            const auto& e = j["epsilon"];
            if (e.is_null()) {
                c.epsilon = std::nullopt;
            } else if (e.is_string()) {
                c.epsilon = parse_epsilon(e.get<std::string>());
            } else {
                c.epsilon = e.get<double>();
            }
        }
        if (j.contains("eta") && !j["eta"].is_null()) c.eta = j["eta"].get<double>();
        c.outer_iterations = j.value("T", c.outer_iterations);
        c.inner_steps = j.value("T_tilde", c.inner_steps);
        c.seed = j.value("seed", c.seed);
        if (j.contains("proxy")) c.proxy = train_config_from_json(j["proxy"]);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed attack config: ") + e.what());
    }
    c.validate();
    return c;
}

json attack_sidecar(const AttackConfig& c) {
    return {{"epsilon", c.epsilon ? json(*c.epsilon) : json(nullptr)},
            {"eta", c.resolved_eta()},
            {"T", c.outer_iterations},
            {"T_tilde", c.inner_steps},
            {"seed", c.seed}};
}

void AttackLog::write_csv(std::ostream& out) const {
    out << "t,view,proxy_gaussians,tv_score\n";
    const auto old = out.precision(17);
    for (const auto& r : rows) out << r.t << ',' << r.view << ',' << r.proxy_gaussians << ',' << r.tv_score << '\n';
    out.precision(old);
}

double tv_score(const Image& img) {
    const int w = img.width, h = img.height;
    double s = 0.0;
    for (int y = 0; y + 1 < h; ++y) {
        for (int x = 0; x + 1 < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = img.at(x, y, c);
                const double dv = img.at(x, y + 1, c) - v;
                const double dh = img.at(x + 1, y, c) - v;
                s += std::sqrt(dv * dv + dh * dh + kTvSmoothing);
            }
        }
    }
    return s;
}

Image tv_grad(const Image& img) {
    const int w = img.width, h = img.height;
    Image g(w, h);
    for (int y = 0; y + 1 < h; ++y) {
        for (int x = 0; x + 1 < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = img.at(x, y, c);
                const double dv = img.at(x, y + 1, c) - v;
                const double dh = img.at(x + 1, y, c) - v;
                const double inv = 1.0 / std::sqrt(dv * dv + dh * dh + kTvSmoothing);
                g.at(x, y + 1, c) += dv * inv;
                g.at(x + 1, y, c) += dh * inv;
                g.at(x, y, c) -= (dv + dh) * inv;
            }
        }
    }
    return g;
}

Image project_epsilon(const Image& poisoned, const Image& clean, const Epsilon& epsilon) {
    if (!poisoned.same_shape(clean) || poisoned.size() != clean.size()) {
        throw InvalidArgument("poisoned and clean images differ in shape");
    }
    Image out = poisoned;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = out.data[i];
        if (epsilon) v = std::clamp(v, clean.data[i] - *epsilon, clean.data[i] + *epsilon);
        out.data[i] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

Image tv_sign_ascent(const Image& start, const Image& clean, const Epsilon& epsilon, double eta, int steps,
                     bool include_start) {
    Image x = start;
    Image best;
    double best_tv = -std::numeric_limits<double>::infinity();
    if (include_start) {
        best = start;
        best_tv = tv_score(start);
    }
    for (int s = 0; s < steps; ++s) {
        const Image g = tv_grad(x);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double gi = g.data[i];
            x.data[i] += eta * static_cast<double>((gi > 0.0) - (gi < 0.0));
        }
        x = project_epsilon(x, clean, epsilon);
        const double tv = tv_score(x);
        if (tv > best_tv) {
            best_tv = tv;
            best = x;
        }
    }
    if (best.size() == 0) best = project_epsilon(start, clean, epsilon);
    return best;
}

PoisonResult poison_splat(const Dataset& clean, const AttackConfig& config) {
    clean.validate();
    config.validate();
    const double extent = training_extent(clean);
    const TrainConfig& pc = config.proxy;

    // proxy trained on clean data exactly as a victim would
    Rng init_rng = make_rng(pc.seed, "trainer.init");
    Trainer proxy(pc, extent, initialize_cloud(clean, pc, extent, init_rng), make_rng(pc.seed, "trainer.densify"));
    {
        ViewSampler sampler(clean.size(), make_rng(pc.seed, "trainer.views"));
        for (int it = 1; it <= pc.iterations; ++it) {
            const View& v = clean.views[sampler.next()];
            proxy.step(v.image, v.pose);
        }
    }

    PoisonResult result;
    result.poisoned.dataset = clean;
    result.poisoned.dataset.name = clean.name + "-poisoned";
    result.poisoned.clean_name = clean.name;
    result.poisoned.config = config;
    result.log.initial_proxy_gaussians = proxy.cloud().size();
    result.log.rows.reserve(static_cast<std::size_t>(config.outer_iterations));

    proxy.restart_schedule();
    ViewSampler sampler(clean.size(), make_rng(config.seed, "attack.views"));
    const double eta = config.resolved_eta();
    for (int t = 1; t <= config.outer_iterations; ++t) {
        const std::size_t k = sampler.next();
        const View& v = clean.views[k];
        const Image rendered = proxy.render_view(v.pose);
        Image target = tv_sign_ascent(rendered, v.image, config.epsilon, eta, config.inner_steps, false);
        proxy.step(target, v.pose);
        const double tv = tv_score(target);
        result.poisoned.dataset.views[k].image = std::move(target);
        result.log.rows.push_back({t, k, proxy.cloud().size(), tv});
    }
    return result;
}

PoisonedDataset naive_tv_attack(const Dataset& clean, const AttackConfig& config) {
    clean.validate();
    config.validate();
    PoisonedDataset out;
    out.dataset = clean;
    out.dataset.name = clean.name + "-naive";
    out.clean_name = clean.name;
    out.config = config;
    const long total = static_cast<long>(config.outer_iterations) * config.inner_steps;
    const int steps = static_cast<int>(std::max<long>(1, total / static_cast<long>(clean.size())));
    const double eta = config.resolved_eta();
    for (auto& v : out.dataset.views) {
        v.image = tv_sign_ascent(v.image, v.image, config.epsilon, eta, steps, true);
    }
    return out;
}

double max_perturbation(const Dataset& poisoned, const Dataset& clean) {
    if (poisoned.size() != clean.size()) throw InvalidArgument("datasets differ in view count");
    double m = 0.0;
    for (std::size_t k = 0; k < clean.size(); ++k) {
        const Image& a = poisoned.views[k].image;
        const Image& b = clean.views[k].image;
        if (!a.same_shape(b)) throw InvalidArgument("view " + std::to_string(k) + " differs in shape");
        for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    }
    return m;
}

bool poses_identical(const Dataset& a, const Dataset& b) {
    if (a.size() != b.size()) return false;
    if (std::memcmp(&a.camera_angle_x, &b.camera_angle_x, sizeof(double)) != 0) return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const Mat4& ma = a.views[k].transform_matrix;
        const Mat4& mb = b.views[k].transform_matrix;
        if (std::memcmp(ma.data(), mb.data(), sizeof(double) * 16) != 0) return false;
        const CameraPose& pa = a.views[k].pose;
        const CameraPose& pb = b.views[k].pose;
        if (std::memcmp(pa.world_to_camera.data(), pb.world_to_camera.data(), sizeof(double) * 16) != 0) return false;
        if (pa.width != pb.width || pa.height != pb.height) return false;
        for (auto [x, y] : {std::pair{pa.fx, pb.fx}, {pa.fy, pb.fy}, {pa.cx, pb.cx}, {pa.cy, pb.cy}}) {
            if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
        }
    }
    return true;
}

} // namespace psplat

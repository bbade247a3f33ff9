// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
// Usage: acceptance [work_dir]
// Everything runs through the same command-line entry point a user would call,
// on the standard generated scene (64x64, 20 views, 3000 iterations).

#include "psplat/cli.hpp"
#include "psplat/profiler.hpp"
#include "psplat/trainer.hpp"
#include "oracle_suites.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace psplat;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using clock_type = std::chrono::steady_clock;

double minutes_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count() / 60.0;
}

std::string fmt(double v, int digits = 2) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(digits) << v;
    return ss.str();
}

class Pipeline {
public:
    explicit Pipeline(fs::path work) : work_(std::move(work)) {
        fs::remove_all(work_);
        fs::create_directories(work_);
        log_.open(work_ / "cli.log");
    }

    fs::path path(const std::string& name) const { return work_ / name; }

    // Runs one subcommand and returns its wall-clock minutes; throws on a non-zero exit.
    double run(std::vector<std::string> args) {
        std::ostringstream out, err;
        log_ << "$ psplat";
        for (const auto& a : args) log_ << ' ' << a;
        log_ << '\n';
        const auto t0 = clock_type::now();
        const int code = run_cli(args, out, err);
        const double min = minutes_since(t0);
        log_ << out.str() << err.str() << "(" << fmt(min, 3) << " min, exit " << code << ")\n" << std::flush;
        if (code != kExitOk) throw std::runtime_error("psplat " + args.front() + " failed: " + err.str());
        return min;
    }

    // Exit code only, for commands whose failure is an expected outcome.
    int status(std::vector<std::string> args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        log_ << "$ psplat " << args.front() << " ... -> exit " << code << '\n' << out.str() << err.str() << std::flush;
        return code;
    }

    fs::path write_json(const std::string& name, const json& j) {
        const fs::path p = work_ / name;
        std::ofstream(p) << j.dump(2);
        return p;
    }

private:
    fs::path work_;
    std::ofstream log_;
};

CostMetrics metrics(const fs::path& run) {
    std::ifstream in(run / "metrics.csv");
    if (!in) throw std::runtime_error("no metrics in " + run.string());
    return read_cost_metrics_csv(in);
}

double mean_tv(const fs::path& dataset) {
    const Dataset d = load_dataset(dataset, LoadOptions{Vec3::Zero()});
    double s = 0.0;
    for (const auto& v : d.views) s += tv_score(v.image);
    return s / static_cast<double>(d.size());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool is_timing_column(const std::string& name) {
    static const std::set<std::string> timing = {"ms", "total_minutes", "render_fps", "ms_per_iter", "fps"};
    return timing.contains(name);
}

// A CSV with its wall-clock columns removed.
std::string without_timing_columns(const fs::path& csv) {
    std::ifstream in(csv);
    std::string line, out;
    std::vector<bool> keep;
    bool header = true;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string cell;
        for (std::size_t col = 0; std::getline(ss, cell, ','); ++col) {
            if (header) keep.push_back(!is_timing_column(cell));
            if (col < keep.size() && keep[col]) out += cell + ',';
        }
        out += '\n';
        header = false;
    }
    return out;
}

// Everything a run wrote that does not depend on wall-clock time: the hashes of
// the non-timing artifacts, the non-timing columns of the timing CSVs, and the
// memory correlation of a sweep.
json stable_artifacts(const fs::path& run) {
    const json m = read_manifest(run);
    json a = m.at("artifacts");
    for (const auto& t : m.at("timing_artifacts")) {
        const std::string name = t.get<std::string>();
        if (!a.contains(name)) continue;
        a.erase(name);
        if (name.ends_with(".csv")) a[name + " (non-timing columns)"] = without_timing_columns(run / name);
        if (name == "correlation.json") {
            a[name + " (count_vs_mem_bytes)"] = json::parse(slurp(run / name)).at("count_vs_mem_bytes");
        }
    }
    return a;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Report {
public:
    void add(int id, const std::string& name, const std::function<Outcome()>& body) {
        Outcome o;
        const auto t0 = clock_type::now();
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double min = minutes_since(t0);
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " ("
                  << fmt(min) << " min)" << std::endl;
        all_ = all_ && o.pass;
    }

    bool all_passed() const { return all_; }

private:
    bool all_ = true;
};

} // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
    Pipeline p(work);
    Report report;
    const std::string scene = p.path("scene").string();

    // Shared runs, computed once. Each lambda records its own wall time so the
    // criteria can charge the runs they depend on.
    double t_clean = 0.0, t_p_inf = 0.0, t_v_inf = 0.0, t_p_16 = 0.0, t_v_16 = 0.0;
    bool scene_ready = false, clean_ready = false, p16_ready = false;
    const auto ensure_scene = [&] {
        if (scene_ready) return;
        p.run({"genscene", "--seed", "0", "-o", scene});
        scene_ready = true;
    };
    const auto ensure_clean = [&] {
        ensure_scene();
        if (clean_ready) return;
        t_clean = p.run({"train", scene, "-o", p.path("clean").string()});
        clean_ready = true;
    };
    const auto ensure_p16 = [&] {
        ensure_clean();
        if (p16_ready) return;
        t_p_16 = p.run({"attack", scene, "--epsilon", "16/255", "-o", p.path("p_16").string()});
        t_v_16 = p.run({"train", p.path("p_16").string(), "-o", p.path("v_16").string()});
        p16_ready = true;
    };

    report.add(1, "gradient suite", [&] {
        const auto t0 = clock_type::now();
        const testing::FdTally r = testing::render_fd_suite(1000, 20);
        const testing::FdTally l = testing::loss_fd_suite(2000, 20);
        const testing::FdTally t = testing::tv_fd_suite(3000, 20);
        const double min = minutes_since(t0);
        const bool ok = r.failed == 0 && l.failed == 0 && t.failed == 0 && r.scenes >= 20 && l.scenes >= 20 &&
                        min < 1.0;
        std::string d = "rasterizer " + std::to_string(r.compared - r.failed) + "/" + std::to_string(r.compared) +
                        " partials over " + std::to_string(r.scenes) + " scenes within rel 1e-3, loss " +
                        std::to_string(l.compared - l.failed) + "/" + std::to_string(l.compared) + ", tv_grad " +
                        std::to_string(t.compared - t.failed) + "/" + std::to_string(t.compared) + " within rel 1e-4";
        for (const auto* f : {&r, &l, &t}) {
            if (f->failed) d += "; first mismatch " + f->first_failure;
        }
        return Outcome{ok, d};
    });

    report.add(2, "oracle equivalence", [&] {
        const auto t0 = clock_type::now();
        const testing::OracleTally o = testing::render_oracle_suite(5000, 40);
        const double min = minutes_since(t0);
        std::ostringstream d;
        d << o.scenes << " scenes up to 32x32, max |tiled - brute force| = " << std::scientific << std::setprecision(2)
          << o.max_diff << " (limit 1e-6)";
        return Outcome{o.max_diff <= 1e-6 && o.in_range && min < 1.0, d.str()};
    });

    report.add(3, "attack effectiveness, unbounded", [&] {
        ensure_clean();
        t_p_inf = p.run({"attack", scene, "--epsilon", "inf", "-o", p.path("p_inf").string()});
        t_v_inf = p.run({"train", p.path("p_inf").string(), "-o", p.path("v_inf").string()});
        const CostMetrics c = metrics(p.path("clean")), v = metrics(p.path("v_inf"));
        const double g = double(v.final_gaussians) / double(c.final_gaussians);
        const double m = double(v.peak_mem_bytes) / double(c.peak_mem_bytes);
        const double t = v.total_minutes / c.total_minutes;
        const double total = t_clean + t_p_inf + t_v_inf;
        return Outcome{g >= 2.0 && m >= 1.5 && t >= 1.3 && total <= 30.0,
                       "gaussians " + std::to_string(c.final_gaussians) + " -> " +
                           std::to_string(v.final_gaussians) + " (" + fmt(g) + "x, need 2.0), peak memory " +
                           fmt(m) + "x (need 1.5), training minutes " + fmt(t) + "x (need 1.3); clean+attack+victim " +
                           fmt(total, 1) + " min (limit 30)"};
    });

    report.add(4, "attack effectiveness, eps = 16/255", [&] {
        ensure_p16();
        const CostMetrics c = metrics(p.path("clean")), v = metrics(p.path("v_16"));
        const double g = double(v.final_gaussians) / double(c.final_gaussians);
        const double total = t_p_16 + t_v_16;
        return Outcome{g >= 1.2 && total <= 30.0,
                       "gaussians " + std::to_string(c.final_gaussians) + " -> " + std::to_string(v.final_gaussians) +
                           " (" + fmt(g) + "x, need 1.2); attack+victim " + fmt(total, 1) + " min (limit 30)"};
    });

    report.add(5, "ablation ordering", [&] {
        ensure_p16();
        const double t_n = p.run({"attack", scene, "--epsilon", "16/255", "--naive", "-o", p.path("n_16").string()});
        const double t_vn = p.run({"train", p.path("n_16").string(), "-o", p.path("vn_16").string()});
        const auto c = metrics(p.path("clean")).final_gaussians;
        const auto v = metrics(p.path("v_16")).final_gaussians;
        const auto n = metrics(p.path("vn_16")).final_gaussians;
        const double total = t_p_16 + t_v_16 + t_n + t_vn;
        return Outcome{v > n && n > c && total <= 45.0,
                       "poison-splat " + std::to_string(v) + " > naive TV " + std::to_string(n) + " > clean " +
                           std::to_string(c) + "; " + fmt(total, 1) + " min (limit 45)"};
    });

    report.add(6, "budget soundness", [&] {
        ensure_scene();
        const auto t0 = clock_type::now();
        // eps = 0 is independent of the attack's length, so a short run suffices
        const json proxy = {{"iterations", 100}, {"init_count", 300}, {"densify_from", 20}, {"densify_interval", 20}};
        const fs::path cfg = p.write_json("attack_short.json", {{"T", 40}, {"T_tilde", 10}, {"proxy", proxy}});
        p.run({"attack", scene, "-c", cfg.string(), "--epsilon", "0", "-o", p.path("p_0").string()});
        bool identical = true;
        int pngs = 0;
        for (const auto& e : fs::directory_iterator(scene)) {
            if (e.path().extension() != ".png") continue;
            ++pngs;
            identical = identical && slurp(e.path()) == slurp(p.path("p_0") / e.path().filename());
        }
        std::vector<std::string> checked, failed;
        for (const char* name : {"p_inf", "p_16", "n_16", "p_0"}) {
            if (!fs::exists(p.path(name))) continue;
            checked.push_back(name);
            if (p.status({"validate", p.path(name).string(), "--clean", scene}) != kExitOk) failed.push_back(name);
        }
        const double min = minutes_since(t0);
        std::string d = "validate passed on " + std::to_string(checked.size() - failed.size()) + "/" +
                        std::to_string(checked.size()) + " poisoned datasets (";
        for (std::size_t i = 0; i < checked.size(); ++i) d += (i ? " " : "") + checked[i];
        d += "); eps = 0 output " + std::string(identical ? "byte-identical" : "DIFFERS") + " on " +
             std::to_string(pngs) + " images";
        return Outcome{failed.empty() && checked.size() == 4 && identical && pngs > 0 && min < 1.0, d};
    });

    report.add(7, "cost correlations", [&] {
        ensure_scene();
        const auto t0 = clock_type::now();
        p.run({"sweep", scene, "--counts", "1000,2000,4000,8000,16000", "--iterations", "50", "-o",
               p.path("sweep").string()});
        std::vector<double> n, mem, ms, param;
        {
            std::ifstream in(p.path("sweep") / "sweep.csv");
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                std::istringstream ss(line);
                std::string cell;
                std::vector<double> row;
                while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
                n.push_back(row.at(0));
                mem.push_back(row.at(1));
                ms.push_back(row.at(2));
                const auto count = static_cast<std::size_t>(row.at(0));
                param.push_back(double(memory_model(count, 0, 64, 64, 0) - memory_model(0, 0, 64, 64, 0)));
            }
        }
        const Correlation c_mem = correlate(n, mem), c_ms = correlate(n, ms), c_param = correlate(n, param);

        // texture frequency stays within what a 64-pixel view resolves
        std::vector<double> tv, count;
        std::string per;
        for (const char* f : {"0", "1", "2", "3", "4"}) {
            const fs::path ds = p.path(std::string("freq_") + f);
            const fs::path run = p.path(std::string("freq_") + f + "_run");
            p.run({"genscene", "--seed", "0", "--texture-frequency", f, "-o", ds.string()});
            p.run({"train", ds.string(), "-o", run.string()});
            tv.push_back(mean_tv(ds));
            count.push_back(double(metrics(run).final_gaussians));
            per += std::string(per.empty() ? "" : ", ") + "f" + f + ": TV " + fmt(tv.back(), 0) + " / " +
                   fmt(count.back(), 0) + " G";
        }
        const Correlation c_tex = correlate(tv, count);
        const double min = minutes_since(t0);
        const bool ok = c_mem.pearson > 0.9 && std::abs(c_param.pearson - 1.0) <= 1e-12 && c_ms.pearson > 0.9 &&
                        c_tex.spearman > 0.8 && n.back() / n.front() >= 10.0 && min <= 20.0;
        return Outcome{ok, "counts " + fmt(n.front(), 0) + ".." + fmt(n.back(), 0) + ": r(count, memory) " +
                               fmt(c_mem.pearson, 4) + ", parameter term r = " + fmt(c_param.pearson, 12) +
                               ", r(count, ms/iter) " + fmt(c_ms.pearson, 4) + "; rho(TV, gaussians) " +
                               fmt(c_tex.spearman, 3) + " [" + per + "]"};
    });

    report.add(8, "Gaussian-cap defense", [&] {
        if (!fs::exists(p.path("v_inf") / "metrics.csv")) throw std::runtime_error("unbounded runs unavailable");
        const CostMetrics c = metrics(p.path("clean")), v = metrics(p.path("v_inf"));
        const double t = p.run({"train", p.path("p_inf").string(), "--max-gaussians",
                                std::to_string(c.final_gaussians), "-o", p.path("cap_inf").string()});
        const CostMetrics k = metrics(p.path("cap_inf"));
        const std::size_t fixed = memory_model(0, 0, 64, 64, 0);
        const bool mem_ok = k.peak_mem_bytes <= c.peak_mem_bytes + fixed;
        const double drop = v.final_psnr_db - k.final_psnr_db;
        return Outcome{mem_ok && drop >= 2.0 && k.final_gaussians <= c.final_gaussians && t <= 30.0,
                       "cap " + std::to_string(c.final_gaussians) + ": peak memory " +
                           std::to_string(k.peak_mem_bytes) + " vs clean " + std::to_string(c.peak_mem_bytes) +
                           " (+" + std::to_string(fixed) + " allowed), uncapped " + std::to_string(v.peak_mem_bytes) +
                           "; PSNR " + fmt(v.final_psnr_db) + " -> " + fmt(k.final_psnr_db) + " dB (drop " +
                           fmt(drop) + ", need 2.0)"};
    });

    report.add(9, "transfer to unseen victim settings", [&] {
        ensure_p16();
        const auto t0 = clock_type::now();
        const fs::path tau = p.write_json("victim_tau.json", {{"tau_g", 0.0001}});
        const fs::path interval = p.write_json("victim_interval.json", {{"densify_interval", 200}});
        std::string d;
        bool ok = true;
        for (const auto& [name, cfg] : {std::pair{"tau_g=0.0001", tau}, std::pair{"densify_interval=200", interval}}) {
            const std::string tag = cfg.stem().string();
            p.run({"train", scene, "-c", cfg.string(), "-o", p.path(tag + "_clean").string()});
            p.run({"train", p.path("p_16").string(), "-c", cfg.string(), "-o", p.path(tag + "_p16").string()});
            const auto c = metrics(p.path(tag + "_clean")).final_gaussians;
            const auto v = metrics(p.path(tag + "_p16")).final_gaussians;
            const double r = double(v) / double(c);
            ok = ok && r >= 1.15;
            d += std::string(d.empty() ? "" : "; ") + name + ": " + std::to_string(c) + " -> " + std::to_string(v) +
                 " (" + fmt(r) + "x, need 1.15)";
        }
        const double min = minutes_since(t0);
        return Outcome{ok && min <= 45.0, d};
    });

    report.add(10, "determinism", [&] {
        ensure_clean();
        const auto t0 = clock_type::now();
        const json train_cfg = {{"iterations", 600}, {"densify_from", 100}, {"densify_interval", 100}};
        const fs::path tc = p.write_json("det_train.json", train_cfg);
        const fs::path ac = p.write_json("det_attack.json", {{"T", 300}, {"T_tilde", 10}, {"proxy", train_cfg}});
        std::vector<std::pair<std::string, std::vector<std::string>>> pipelines = {
            {"train", {"train", scene, "-c", tc.string(), "--seed", "7"}},
            {"attack", {"attack", scene, "-c", ac.string(), "--epsilon", "16/255", "--seed", "7"}},
            {"attack --naive", {"attack", scene, "-c", ac.string(), "--epsilon", "16/255", "--naive", "--seed", "7"}},
            {"sweep", {"sweep", scene, "--counts", "500,1000,2000", "--iterations", "10", "--seed", "7"}},
        };
        std::string d;
        bool ok = true;
        int i = 0;
        for (auto& [name, args] : pipelines) {
            json hashes[2];
            for (int k = 0; k < 2; ++k) {
                std::vector<std::string> a = args;
                const fs::path out = p.path("det_" + std::to_string(i) + (k ? "_b" : "_a"));
                a.insert(a.end(), {"-o", out.string()});
                p.run(a);
                hashes[k] = stable_artifacts(out);
            }
            const bool same = hashes[0] == hashes[1] && !hashes[0].empty();
            ok = ok && same;
            d += std::string(d.empty() ? "" : ", ") + name + (same ? " identical" : " DIFFERS") + " (" +
                 std::to_string(hashes[0].size()) + " files)";
            ++i;
        }
        // the full-scale clean run once more
        p.run({"train", scene, "-o", p.path("clean_again").string()});
        const bool full = stable_artifacts(p.path("clean")) == stable_artifacts(p.path("clean_again"));
        ok = ok && full;
        d += std::string(", full clean training ") + (full ? "identical" : "DIFFERS");
        const double min = minutes_since(t0);
        return Outcome{ok && min <= 10.0, d};
    });

    std::cout << (report.all_passed() ? "all criteria passed" : "some criteria failed") << std::endl;
    return report.all_passed() ? 0 : 1;
}

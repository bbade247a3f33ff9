#include "psplat/cli.hpp"

#include "psplat/attack.hpp"
#include "psplat/checkpoint.hpp"
#include "psplat/profiler.hpp"
#include "psplat/scene_io.hpp"
#include "psplat/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

namespace psplat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Thrown for bad input that CLI11 itself cannot see (e.g. validation failures).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string iso_utc(std::chrono::system_clock::time_point tp) {
    const std::time_t t = std::chrono::system_clock::to_time_t(tp);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("malformed " + path.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// One manifest per run: what ran, on what, with which resolved configuration,
// when, and the content hash of everything it wrote.
class Manifest {
public:
    Manifest(std::string command, const std::vector<std::string>& args)
        : start_(std::chrono::system_clock::now()) {
        j_["command"] = std::move(command);
        j_["args"] = args;
    }

    json& operator[](const char* key) { return j_[key]; }

    void add_artifact(const fs::path& rel, bool timing = false) {
        artifacts_.push_back(rel);
        if (timing) timing_.push_back(rel.generic_string());
    }

    void add_tree(const fs::path& root, const fs::path& sub = {}) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(root / sub)) {
            if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
        }
        std::sort(files.begin(), files.end());
        for (auto& f : files) {
            if (f != "manifest.json") add_artifact(f);
        }
    }

    void write(const fs::path& out_dir) {
        const auto end = std::chrono::system_clock::now();
        j_["started_utc"] = iso_utc(start_);
        j_["finished_utc"] = iso_utc(end);
        j_["wall_seconds"] = std::chrono::duration<double>(end - start_).count();
        json hashes = json::object();
        for (const auto& a : artifacts_) hashes[a.generic_string()] = sha256_file(out_dir / a);
        j_["artifacts"] = hashes;
        j_["timing_artifacts"] = timing_;
        write_json_file(j_, out_dir / "manifest.json");
    }

private:
    json j_;
    std::chrono::system_clock::time_point start_;
    std::vector<fs::path> artifacts_;
    std::vector<std::string> timing_;
};

std::vector<std::size_t> parse_counts(const std::string& text) {
    std::vector<std::size_t> counts;
    std::stringstream ss(text);
    for (std::string cell; std::getline(ss, cell, ',');) {
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(cell, &pos);
            if (pos != cell.size() || v <= 0) throw std::invalid_argument(cell);
            counts.push_back(static_cast<std::size_t>(v));
        } catch (const std::logic_error&) {
            throw InvalidArgument("counts must be positive integers: " + text);
        }
    }
    if (counts.empty()) throw InvalidArgument("counts must not be empty");
    return counts;
}

std::string fixed2(double v) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(2) << v;
    return ss.str();
}

double ratio(double num, double den) { return den != 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN(); }

// ---- subcommand options -------------------------------------------------

struct TrainOpts {
    std::string dataset, config, out;
    std::optional<int> iterations;
    std::optional<std::size_t> max_gaussians;
    std::optional<std::uint64_t> seed;
    std::optional<int> init_count;
    std::optional<int> densify_interval;
};

struct AttackOpts {
    std::string dataset, config, out;
    bool naive = false;
    std::optional<std::string> epsilon;
    std::optional<double> eta;
    std::optional<int> steps, inner_steps, proxy_iterations;
    std::optional<std::uint64_t> seed;
};

struct ReportOpts {
    std::vector<std::string> runs;
    std::string out;
};

struct SweepOpts {
    std::string dataset, counts = "1000,2000,4000", out;
    int iterations = 50;
    std::uint64_t seed = 0;
};

struct GenOpts {
    std::string spec, out;
    std::optional<std::uint64_t> seed;
    std::optional<double> frequency;
    std::optional<int> views, resolution;
};

struct ValidateOpts {
    std::string poisoned, clean, out;
    std::optional<std::string> epsilon;
};

struct ReplayOpts {
    std::string manifest, out;
};

// ---- subcommands --------------------------------------------------------

int cmd_train(const TrainOpts& o, const std::vector<std::string>& args, std::ostream& out) {
    TrainConfig cfg = o.config.empty() ? TrainConfig{} : train_config_from_json(read_json_file(o.config));
    if (o.iterations) cfg.iterations = *o.iterations;
    if (o.max_gaussians) cfg.max_gaussians = *o.max_gaussians;
    if (o.seed) cfg.seed = *o.seed;
    if (o.init_count) cfg.init_count = *o.init_count;
    if (o.densify_interval) cfg.densify_interval = *o.densify_interval;
    cfg.validate();

    Manifest manifest("train", args);
    const Dataset ds = load_dataset(o.dataset, LoadOptions{cfg.background});
    make_dir(o.out);
    const fs::path dir(o.out);

    TrainResult r = train(ds, cfg);
    save_checkpoint(r.cloud, dir / "model.ply");
    {
        auto f = open_out(dir / "train_record.csv");
        r.record.write_csv(f);
    }
    const CostMetrics m = summarize(r.record, r.cloud, ds, cfg.background);
    {
        auto f = open_out(dir / "metrics.csv");
        CostMetrics::write_csv_header(f);
        m.write_csv_row(f);
    }
    manifest["config"] = to_json(cfg);
    manifest["dataset"] = fs::absolute(o.dataset).lexically_normal().string();
    manifest["output"] = fs::absolute(dir).lexically_normal().string();
    manifest["seed"] = cfg.seed;
    manifest.add_artifact("model.ply");
    manifest.add_artifact("train_record.csv", true);
    manifest.add_artifact("metrics.csv", true);
    manifest.write(dir);
    out << "trained " << ds.size() << " views: " << m.final_gaussians << " Gaussians, peak " << m.peak_mem_bytes
        << " bytes, " << std::setprecision(4) << m.total_minutes << " min, PSNR " << m.final_psnr_db << " dB\n";
    return kExitOk;
}

// Source PNG of a loaded view, for byte-for-byte copies.
fs::path source_png(const fs::path& dataset_path, const View& v) {
    const fs::path root = fs::is_directory(dataset_path) ? dataset_path : dataset_path.parent_path();
    fs::path p = root / v.file_path;
    if (!p.has_extension()) p += ".png";
    return p;
}

int cmd_attack(const AttackOpts& o, const std::vector<std::string>& args, std::ostream& out) {
    AttackConfig cfg = o.config.empty() ? AttackConfig{} : attack_config_from_json(read_json_file(o.config));
    if (o.epsilon) cfg.epsilon = parse_epsilon(*o.epsilon);
    if (o.eta) cfg.eta = *o.eta;
    if (o.steps) cfg.outer_iterations = *o.steps;
    if (o.inner_steps) cfg.inner_steps = *o.inner_steps;
    if (o.proxy_iterations) cfg.proxy.iterations = *o.proxy_iterations;
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.proxy.seed = *o.seed;
    }
    cfg.validate();

    Manifest manifest(o.naive ? "attack --naive" : "attack", args);
    const Dataset clean = load_dataset(o.dataset, LoadOptions{cfg.proxy.background});
    if (fs::exists(o.out) && fs::equivalent(fs::absolute(o.out), fs::absolute(fs::path(o.dataset)))) {
        throw InvalidArgument("output directory must differ from the dataset");
    }
    make_dir(o.out);
    const fs::path dir(o.out);

    PoisonedDataset poisoned;
    std::optional<AttackLog> log;
    if (o.naive) {
        poisoned = naive_tv_attack(clean, cfg);
    } else {
        PoisonResult r = poison_splat(clean, cfg);
        poisoned = std::move(r.poisoned);
        log = std::move(r.log);
    }
    save_dataset(poisoned.dataset, dir, attack_sidecar(cfg));
    // untouched views keep their exact source bytes
    for (std::size_t k = 0; k < clean.size(); ++k) {
        const View& v = poisoned.dataset.views[k];
        std::vector<std::uint8_t> a(v.image.size()), b(v.image.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = quantize_channel(v.image.data[i]);
            b[i] = quantize_channel(clean.views[k].image.data[i]);
        }
        if (a != b) continue;
        fs::path dst = dir / v.file_path;
        if (!dst.has_extension()) dst += ".png";
        fs::copy_file(source_png(o.dataset, clean.views[k]), dst, fs::copy_options::overwrite_existing);
    }
    if (log) {
        auto f = open_out(dir / "attack_log.csv");
        log->write_csv(f);
    }
    manifest["config"] = to_json(cfg);
    manifest["naive"] = o.naive;
    manifest["dataset"] = fs::absolute(o.dataset).lexically_normal().string();
    manifest["output"] = fs::absolute(dir).lexically_normal().string();
    manifest["seed"] = cfg.seed;
    manifest.add_tree(dir);
    manifest.write(dir);

    double tv_clean = 0.0, tv_poisoned = 0.0;
    for (std::size_t k = 0; k < clean.size(); ++k) {
        tv_clean += tv_score(clean.views[k].image);
        tv_poisoned += tv_score(poisoned.dataset.views[k].image);
    }
    out << (o.naive ? "naive TV attack" : "poison-splat attack") << " wrote " << clean.size()
        << " views; mean TV " << tv_clean / clean.size() << " -> " << tv_poisoned / clean.size() << '\n';
    return kExitOk;
}

int cmd_report(const ReportOpts& o, const std::vector<std::string>& args, std::ostream& out) {
    if (o.runs.size() < 2) throw UsageError("report needs at least two run directories");
    Manifest manifest("report", args);
    std::vector<CostMetrics> ms;
    for (const auto& r : o.runs) {
        const fs::path p = fs::path(r) / "metrics.csv";
        std::ifstream in(p);
        if (!in) throw IoError("metrics file not found: " + p.string());
        ms.push_back(read_cost_metrics_csv(in));
    }
    std::ostringstream csv;
    csv << "run,gaussians,mem_bytes,minutes,fps,psnr_db,gaussians_ratio,mem_ratio,minutes_ratio,fps_ratio\n";
    const CostMetrics& base = ms.front();
    for (std::size_t i = 0; i < ms.size(); ++i) {
        const CostMetrics& m = ms[i];
        csv << fs::path(o.runs[i]).lexically_normal().filename().string() << ',' << m.final_gaussians << ','
            << m.peak_mem_bytes << ',' << std::setprecision(6) << m.total_minutes << ',' << m.render_fps << ','
            << m.final_psnr_db << ','
            << fixed2(ratio(static_cast<double>(m.final_gaussians), static_cast<double>(base.final_gaussians))) << ','
            << fixed2(ratio(static_cast<double>(m.peak_mem_bytes), static_cast<double>(base.peak_mem_bytes))) << ','
            << fixed2(ratio(m.total_minutes, base.total_minutes)) << ','
            << fixed2(ratio(m.render_fps, base.render_fps)) << '\n';
    }
    out << csv.str();
    if (!o.out.empty()) {
        make_dir(o.out);
        const fs::path dir(o.out);
        open_out(dir / "report.csv") << csv.str();
        json runs = json::array();
        for (const auto& r : o.runs) runs.push_back(fs::absolute(r).lexically_normal().string());
        manifest["runs"] = runs;
        manifest["output"] = fs::absolute(dir).lexically_normal().string();
        manifest.add_artifact("report.csv", true);
        manifest.write(dir);
    }
    return kExitOk;
}

int cmd_sweep(const SweepOpts& o, const std::vector<std::string>& args, std::ostream& out) {
    std::vector<std::size_t> counts = parse_counts(o.counts);
    std::sort(counts.begin(), counts.end());
    if (o.iterations < 1) throw InvalidArgument("iterations must be at least 1");
    Manifest manifest("sweep", args);
    const Dataset ds = load_dataset(o.dataset, LoadOptions{Vec3::Zero()});
    make_dir(o.out);
    const fs::path dir(o.out);

    const auto rows = sweep_gaussians_vs_cost(ds, counts, o.iterations, o.seed);
    {
        auto f = open_out(dir / "sweep.csv");
        write_sweep_csv(rows, f);
    }
    json corr = json::object();
    if (rows.size() >= 3) {
        std::vector<double> n, mem, ms;
        for (const auto& r : rows) {
            n.push_back(static_cast<double>(r.count));
            mem.push_back(static_cast<double>(r.mem_bytes));
            ms.push_back(r.ms_per_iter);
        }
        const Correlation cm = correlate(n, mem), ct = correlate(n, ms);
        corr = {{"count_vs_mem_bytes", {{"pearson", cm.pearson}, {"spearman", cm.spearman}}},
                {"count_vs_ms_per_iter", {{"pearson", ct.pearson}, {"spearman", ct.spearman}}}};
        out << "pearson r(count, mem) = " << cm.pearson << ", r(count, ms/iter) = " << ct.pearson << '\n';
    } else {
        out << "fewer than 3 counts: correlations skipped\n";
    }
    write_json_file(corr, dir / "correlation.json");
    manifest["config"] = {{"counts", counts}, {"iterations", o.iterations}, {"densify", false}};
    manifest["dataset"] = fs::absolute(o.dataset).lexically_normal().string();
    manifest["output"] = fs::absolute(dir).lexically_normal().string();
    manifest["seed"] = o.seed;
    manifest.add_artifact("sweep.csv", true);
    manifest.add_artifact("correlation.json", true);
    manifest.write(dir);
    return kExitOk;
}

int cmd_genscene(const GenOpts& o, const std::vector<std::string>& args, std::ostream& out) {
    SceneSpec spec = o.spec.empty() ? standard_scene(o.frequency.value_or(4.0), o.seed.value_or(0))
                                    : scene_spec_from_json(read_json_file(o.spec));
    if (o.seed) spec.seed = *o.seed;
    if (o.views) spec.n_views = *o.views;
    if (o.resolution) spec.resolution = *o.resolution;
    if (o.frequency && !o.spec.empty()) {
        for (auto& p : spec.primitives) p.texture_frequency = *o.frequency;
    }
    spec.validate();
    Manifest manifest("genscene", args);
    const Dataset ds = gen_scene(spec);
    make_dir(o.out);
    const fs::path dir(o.out);
    save_dataset(ds, dir);
    write_json_file(to_json(spec), dir / "scene.json");
    manifest["config"] = to_json(spec);
    manifest["output"] = fs::absolute(dir).lexically_normal().string();
    manifest["seed"] = spec.seed;
    manifest.add_tree(dir);
    manifest.write(dir);
    out << "generated " << ds.size() << " views at " << spec.resolution << "x" << spec.resolution << '\n';
    return kExitOk;
}

int cmd_validate(const ValidateOpts& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Manifest manifest("validate", args);
    const Dataset poisoned = load_dataset(o.poisoned);
    const Dataset clean = load_dataset(o.clean);
    Epsilon eps;
    if (o.epsilon) {
        eps = parse_epsilon(*o.epsilon);
    } else {
        const fs::path side = (fs::is_directory(o.poisoned) ? fs::path(o.poisoned) : fs::path(o.poisoned).parent_path()) /
                              "attack.json";
        if (!fs::exists(side)) throw UsageError("no --epsilon given and no attack.json next to the dataset");
        const json j = read_json_file(side);
        if (!j.contains("epsilon")) throw UsageError("attack.json has no epsilon");
        if (!j["epsilon"].is_null()) eps = j["epsilon"].get<double>();
    }

    std::vector<std::string> failures;
    if (!poses_identical(poisoned, clean)) failures.push_back("camera poses differ from the clean dataset");
    int max_levels = 0;
    if (poisoned.size() == clean.size()) {
        for (std::size_t k = 0; k < clean.size(); ++k) {
            const Image& a = poisoned.views[k].image;
            const Image& b = clean.views[k].image;
            if (!a.same_shape(b)) {
                failures.push_back("view " + std::to_string(k) + " changed resolution");
                continue;
            }
            for (std::size_t i = 0; i < a.size(); ++i) {
                const int d = std::abs(int(quantize_channel(a.data[i])) - int(quantize_channel(b.data[i])));
                max_levels = std::max(max_levels, d);
            }
        }
    }
    // the budget in whole 8-bit levels; tolerance absorbs k/255 round-off
    const long budget = eps ? static_cast<long>(std::floor(*eps * 255.0 + 1e-6)) : 255;
    if (max_levels > budget) {
        failures.push_back("perturbation " + std::to_string(max_levels) + "/255 exceeds budget " +
                           std::to_string(budget) + "/255");
    }
    const bool ok = failures.empty();
    json report = {{"ok", ok},
                   {"epsilon", eps ? json(*eps) : json(nullptr)},
                   {"max_perturbation_levels", max_levels},
                   {"views", poisoned.size()},
                   {"failures", failures}};
    if (!o.out.empty()) {
        make_dir(o.out);
        const fs::path dir(o.out);
        write_json_file(report, dir / "validation.json");
        manifest["poisoned"] = fs::absolute(o.poisoned).lexically_normal().string();
        manifest["clean"] = fs::absolute(o.clean).lexically_normal().string();
        manifest["output"] = fs::absolute(dir).lexically_normal().string();
        manifest.add_artifact("validation.json");
        manifest.write(dir);
    }
    if (ok) {
        out << "valid: " << poisoned.size() << " views, max perturbation " << max_levels << "/255, poses identical\n";
        return kExitOk;
    }
    for (const auto& f : failures) err << "invalid: " << f << '\n';
    return kExitUsage;
}

int cmd_replay(const ReplayOpts& o, std::ostream& out, std::ostream& err) {
    const fs::path mpath = fs::is_directory(o.manifest) ? fs::path(o.manifest) / "manifest.json" : fs::path(o.manifest);
    const json m = read_json_file(mpath);
    if (!m.contains("args") || !m["args"].is_array()) throw UsageError("manifest has no args");
    std::vector<std::string> args = m["args"].get<std::vector<std::string>>();
    if (!args.empty() && args.front() == "replay") throw UsageError("cannot replay a replay");
    bool replaced = false;
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
        if (args[i] == "--out" || args[i] == "-o") {
            args[i + 1] = o.out;
            replaced = true;
        }
    }
    if (!replaced) {
        args.push_back("--out");
        args.push_back(o.out);
    }
    return run_cli(args, out, err);
}

} // namespace

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot hash " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("SHA-256 unavailable");
    }
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream ss;
    for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return ss.str();
}

json read_manifest(const fs::path& dir) { return read_json_file(dir / "manifest.json"); }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Poison-splat: computation-cost attack on 3D Gaussian Splatting"};
    app.name("psplat");
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    TrainOpts train_o;
    auto* train_c = app.add_subcommand("train", "train a victim model and record its cost");
    train_c->add_option("dataset", train_o.dataset, "dataset directory or transforms.json")->required();
    train_c->add_option("-c,--config", train_o.config, "TrainConfig JSON");
    train_c->add_option("-o,--out", train_o.out, "output directory")->required();
    train_c->add_option("--iterations", train_o.iterations);
    train_c->add_option("--max-gaussians", train_o.max_gaussians, "cap on the Gaussian count");
    train_c->add_option("--seed", train_o.seed);
    train_c->add_option("--init-count", train_o.init_count);
    train_c->add_option("--densify-interval", train_o.densify_interval, "0 disables density control");

    AttackOpts attack_o;
    auto* attack_c = app.add_subcommand("attack", "poison a dataset");
    attack_c->add_option("dataset", attack_o.dataset, "clean dataset")->required();
    attack_c->add_option("-c,--config", attack_o.config, "AttackConfig JSON");
    attack_c->add_option("-o,--out", attack_o.out, "output directory for the poisoned dataset")->required();
    attack_c->add_flag("--naive", attack_o.naive, "per-view TV ascent without a proxy model");
    attack_c->add_option("--epsilon", attack_o.epsilon, "L-inf budget, e.g. 16/255, or inf");
    attack_c->add_option("--eta", attack_o.eta, "sign-step size");
    attack_c->add_option("--steps", attack_o.steps, "outer iterations T");
    attack_c->add_option("--inner-steps", attack_o.inner_steps, "TV ascent steps per outer iteration");
    attack_c->add_option("--proxy-iterations", attack_o.proxy_iterations, "clean proxy training iterations");
    attack_c->add_option("--seed", attack_o.seed, "seed for the attack and its proxy");

    ReportOpts report_o;
    auto* report_c = app.add_subcommand("report", "compare the cost of runs against the first");
    report_c->add_option("runs", report_o.runs, "run directories (first is the baseline)")->required();
    report_c->add_option("-o,--out", report_o.out, "directory for report.csv");

    SweepOpts sweep_o;
    auto* sweep_c = app.add_subcommand("sweep", "cost versus Gaussian count");
    sweep_c->add_option("dataset", sweep_o.dataset)->required();
    sweep_c->add_option("--counts", sweep_o.counts, "comma-separated Gaussian counts")->capture_default_str();
    sweep_c->add_option("--iterations", sweep_o.iterations, "timed steps per count")->capture_default_str();
    sweep_c->add_option("--seed", sweep_o.seed)->capture_default_str();
    sweep_c->add_option("-o,--out", sweep_o.out)->required();

    GenOpts gen_o;
    auto* gen_c = app.add_subcommand("genscene", "render a synthetic textured dataset");
    gen_c->add_option("--spec", gen_o.spec, "SceneSpec JSON (default: standard scene)");
    gen_c->add_option("--seed", gen_o.seed);
    gen_c->add_option("--texture-frequency", gen_o.frequency);
    gen_c->add_option("--views", gen_o.views);
    gen_c->add_option("--resolution", gen_o.resolution);
    gen_c->add_option("-o,--out", gen_o.out)->required();

    ValidateOpts val_o;
    auto* val_c = app.add_subcommand("validate", "check a poisoned dataset's budget and poses");
    val_c->add_option("poisoned", val_o.poisoned)->required();
    val_c->add_option("--clean", val_o.clean)->required();
    val_c->add_option("--epsilon", val_o.epsilon, "budget (default: from attack.json)");
    val_c->add_option("-o,--out", val_o.out);

    ReplayOpts replay_o;
    auto* replay_c = app.add_subcommand("replay", "re-run the command recorded in a manifest");
    replay_c->add_option("manifest", replay_o.manifest, "manifest.json or its run directory")->required();
    replay_c->add_option("-o,--out", replay_o.out)->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (*train_c) return cmd_train(train_o, args, out);
        if (*attack_c) return cmd_attack(attack_o, args, out);
        if (*report_c) return cmd_report(report_o, args, out);
        if (*sweep_c) return cmd_sweep(sweep_o, args, out);
        if (*gen_c) return cmd_genscene(gen_o, args, out);
        if (*val_c) return cmd_validate(val_o, args, out, err);
        if (*replay_c) return cmd_replay(replay_o, out, err);
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    err << "error: no subcommand\n";
    return kExitUsage;
}

} // namespace psplat

#include "psplat/scene_io.hpp"

#include "psplat/rng.hpp"

#include <Eigen/Dense>
#include <png.h>

#include <cmath>
#include <fstream>
#include <numbers>

namespace psplat {

namespace fs = std::filesystem;
using nlohmann::json;

double Dataset::scene_extent() const {
    if (views.empty()) return 0.0;
    Vec3 mean = Vec3::Zero();
    for (const auto& v : views) mean += v.pose.center();
    mean /= static_cast<double>(views.size());
    double r = 0.0;
    for (const auto& v : views) r = std::max(r, (v.pose.center() - mean).norm());
    return r;
}

Vec3 Dataset::focus_point() const {
    Mat3 a = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    Vec3 mean = Vec3::Zero();
    for (const auto& v : views) {
        const Vec3 c = v.pose.center();
        const Vec3 d = v.pose.rotation().row(2).transpose().normalized(); // optical axis in world
        const Mat3 p = Mat3::Identity() - d * d.transpose();
        a += p;
        b += p * c;
        mean += c;
    }
    if (views.empty()) return Vec3::Zero();
    mean /= static_cast<double>(views.size());
    Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv[2] < 1e-6 * std::max(sv[0], 1e-12)) return mean; // parallel axes
    return svd.solve(b);
}

void Dataset::validate() const {
    if (views.empty()) throw InvalidArgument("dataset has no views");
    for (std::size_t k = 0; k < views.size(); ++k) {
        const auto& v = views[k];
        v.pose.validate();
        if (v.image.width != v.pose.width || v.image.height != v.pose.height ||
            v.image.size() != static_cast<std::size_t>(v.image.width) * v.image.height * 3) {
            throw InvalidArgument("view " + std::to_string(k) + ": image does not match its camera");
        }
    }
}

CameraPose pose_from_transform(const Mat4& c2w, double camera_angle_x, int width, int height) {
    if (!c2w.allFinite()) throw InvalidArgument("transform_matrix is not finite");
    Mat3 r = c2w.topLeftCorner<3, 3>();
    if (std::abs(r.determinant()) < 1e-9) throw InvalidArgument("transform_matrix is not invertible");
    r.col(1) = -r.col(1);
    r.col(2) = -r.col(2);
    const Vec3 t = c2w.topRightCorner<3, 1>();
    CameraPose pose;
    pose.world_to_camera.setIdentity();
    pose.world_to_camera.topLeftCorner<3, 3>() = r.transpose();
    pose.world_to_camera.topRightCorner<3, 1>() = -r.transpose() * t;
    pose.fx = pose.fy = 0.5 * width / std::tan(0.5 * camera_angle_x);
    pose.cx = 0.5 * width;
    pose.cy = 0.5 * height;
    pose.width = width;
    pose.height = height;
    pose.validate();
    return pose;
}

std::uint8_t quantize_channel(double v) {
    const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
}

Dataset quantized(const Dataset& dataset) {
    Dataset out = dataset;
    for (auto& v : out.views) {
        for (double& x : v.image.data) x = quantize_channel(x) / 255.0;
    }
    return out;
}

Image read_png(const fs::path& path, const Vec3& background) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw IoError("cannot read image " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGBA;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError("cannot decode image " + path.string() + ": " + img.message);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height));
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t p = 0; p < n; ++p) {
        const int a = buf[p * 4 + 3];
        for (int c = 0; c < 3; ++c) {
            const double v = buf[p * 4 + c] / 255.0;
            // opaque pixels stay bit-exact k/255
            out.data[p * 3 + c] = a == 255 ? v : v * (a / 255.0) + background[c] * (1.0 - a / 255.0);
        }
    }
    return out;
}

void write_png(const Image& image, const fs::path& path) {
    std::vector<png_byte> buf(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) buf[i] = quantize_channel(image.data[i]);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw IoError("cannot write image " + path.string() + ": " + img.message);
    }
}

Dataset load_dataset(const fs::path& path, const LoadOptions& options) {
    fs::path json_path = path;
    if (fs::is_directory(path)) json_path = path / "transforms.json";
    if (!fs::exists(json_path)) throw IoError("dataset not found: " + json_path.string());
    const fs::path root = json_path.parent_path();

    json j;
    try {
        std::ifstream in(json_path);
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("malformed " + json_path.string() + ": " + e.what());
    }

    Dataset ds;
    ds.name = fs::is_directory(path) ? fs::absolute(path).lexically_normal().filename().string() : root.filename().string();
    if (ds.name.empty()) ds.name = "dataset";
    try {
        ds.camera_angle_x = j.at("camera_angle_x").get<double>();
        const auto& frames = j.at("frames");
        if (!frames.is_array() || frames.empty()) throw IoError("dataset has no frames: " + json_path.string());
        for (const auto& fr : frames) {
            View v;
            v.file_path = fr.at("file_path").get<std::string>();
            const auto& m = fr.at("transform_matrix");
            if (!m.is_array() || m.size() != 4) throw IoError("transform_matrix must be 4x4");
            for (int r = 0; r < 4; ++r) {
                if (!m[r].is_array() || m[r].size() != 4) throw IoError("transform_matrix must be 4x4");
                for (int c = 0; c < 4; ++c) v.transform_matrix(r, c) = m[r][c].get<double>();
            }
            fs::path img_path = root / v.file_path;
            if (!img_path.has_extension()) img_path += ".png";
            v.image = read_png(img_path, options.background);
            v.pose = pose_from_transform(v.transform_matrix, ds.camera_angle_x, v.image.width, v.image.height);
            ds.views.push_back(std::move(v));
        }
    } catch (const json::exception& e) {
        throw IoError("malformed " + json_path.string() + ": " + e.what());
    }
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& dir, const std::optional<json>& attack) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    json j;
    j["camera_angle_x"] = dataset.camera_angle_x;
    j["frames"] = json::array();
    for (std::size_t k = 0; k < dataset.views.size(); ++k) {
        const View& v = dataset.views[k];
        std::string rel = v.file_path.empty() ? "./r_" + std::to_string(k) : v.file_path;
        fs::path rel_path(rel);
        if (rel_path.has_extension()) rel_path.replace_extension();
        json m = json::array();
        for (int r = 0; r < 4; ++r) {
            json row = json::array();
            for (int c = 0; c < 4; ++c) row.push_back(v.transform_matrix(r, c));
            m.push_back(row);
        }
        j["frames"].push_back({{"file_path", rel_path.generic_string()}, {"transform_matrix", m}});
        fs::path out = dir / rel_path;
        out += ".png";
        fs::create_directories(out.parent_path(), ec);
        write_png(v.image, out);
    }
    std::ofstream f(dir / "transforms.json");
    if (!f) throw IoError("cannot write " + (dir / "transforms.json").string());
    f << j.dump(2) << '\n';
    if (attack) {
        std::ofstream a(dir / "attack.json");
        if (!a) throw IoError("cannot write " + (dir / "attack.json").string());
        a << attack->dump(2) << '\n';
    }
}

void SceneSpec::validate() const {
    if (n_views < 1) throw InvalidArgument("scene needs at least one view");
    if (resolution < 16) throw InvalidArgument("scene resolution must be at least 16");
    if (supersample < 1) throw InvalidArgument("supersample must be at least 1");
    if (!(camera_radius > 0.0)) throw InvalidArgument("camera radius must be positive");
    if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw InvalidArgument("fov must lie in (0, 180) degrees");
    for (const auto& p : primitives) {
        if (!(p.texture_frequency >= 0.0)) throw InvalidArgument("texture frequency must be non-negative");
        if (!(p.size.minCoeff() > 0.0)) throw InvalidArgument("primitive size must be positive");
    }
}

SceneSpec standard_scene(double texture_frequency, std::uint64_t seed) {
    SceneSpec s;
    s.seed = seed;
    s.name = "standard";
    s.primitives = {
        {PrimitiveKind::Sphere, Vec3(-0.45, -0.2, 0.0), Vec3::Constant(0.55), Vec3(0.9, 0.35, 0.25), texture_frequency},
        {PrimitiveKind::Box, Vec3(0.5, 0.25, -0.05), Vec3(0.4, 0.35, 0.45), Vec3(0.3, 0.8, 0.4), texture_frequency},
        {PrimitiveKind::Sphere, Vec3(0.05, 0.45, 0.6), Vec3::Constant(0.3), Vec3(0.35, 0.45, 0.95), texture_frequency},
    };
    return s;
}

namespace {

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal;
    int primitive = -1;
};

bool intersect_sphere(const Vec3& o, const Vec3& d, const Primitive& p, double& t, Vec3& n) {
    const Vec3 oc = o - p.center;
    const double r = p.size.x();
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - r * r;
    const double disc = b * b - c;
    if (disc < 0.0) return false;
    const double s = std::sqrt(disc);
    double hit = -b - s;
    if (hit <= 1e-9) hit = -b + s;
    if (hit <= 1e-9) return false;
    t = hit;
    n = (o + hit * d - p.center).normalized();
    return true;
}

bool intersect_box(const Vec3& o, const Vec3& d, const Primitive& p, double& t, Vec3& n) {
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int axis0 = 0;
    double sign0 = 1.0;
    for (int a = 0; a < 3; ++a) {
        const double lo = p.center[a] - p.size[a], hi = p.center[a] + p.size[a];
        if (std::abs(d[a]) < 1e-15) {
            if (o[a] < lo || o[a] > hi) return false;
            continue;
        }
        double ta = (lo - o[a]) / d[a], tb = (hi - o[a]) / d[a];
        double s = -1.0;
        if (ta > tb) {
            std::swap(ta, tb);
            s = 1.0;
        }
        if (ta > t0) {
            t0 = ta;
            axis0 = a;
            sign0 = s;
        }
        t1 = std::min(t1, tb);
    }
    if (t0 > t1 || t0 <= 1e-9) return false;
    t = t0;
    n = Vec3::Zero();
    n[axis0] = sign0;
    return true;
}

Vec3 shade(const Primitive& p, const Vec3& point, const Vec3& normal, const Vec3& phase) {
    double pattern = 0.0;
    if (p.texture_frequency > 0.0) {
        const Vec3 q = point - p.center;
        const double w = 2.0 * std::numbers::pi * p.texture_frequency;
        pattern = std::sin(w * (q.x() + phase.x())) * std::sin(w * (q.y() + phase.y())) *
                  std::sin(w * (q.z() + phase.z()));
        pattern = std::clamp(2.0 * pattern, -1.0, 1.0);
    }
    static const Vec3 light = Vec3(0.4, 0.3, 0.85).normalized();
    const double lambert = 0.35 + 0.65 * std::max(0.0, normal.dot(light));
    return (p.rgb * ((0.55 + 0.45 * pattern) * lambert)).cwiseMax(0.0).cwiseMin(1.0);
}

} // namespace

Dataset gen_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng = make_rng(spec.seed, "scene");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Vec3> phases;
    for (std::size_t i = 0; i < spec.primitives.size(); ++i) phases.emplace_back(unit(rng), unit(rng), unit(rng));

    Dataset ds;
    ds.name = spec.name;
    const int res = spec.resolution;
    const double fov = spec.fov_deg * std::numbers::pi / 180.0;
    ds.camera_angle_x = fov;
    const double el = spec.elevation_deg * std::numbers::pi / 180.0;
    const int ss = spec.supersample;

    for (int k = 0; k < spec.n_views; ++k) {
        const double theta = 2.0 * std::numbers::pi * k / spec.n_views;
        const Vec3 pos = spec.camera_radius * Vec3(std::cos(el) * std::cos(theta), std::cos(el) * std::sin(theta), std::sin(el));
        const Vec3 forward = (-pos).normalized();
        const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
        const Vec3 up = right.cross(forward);

        View v;
        v.transform_matrix.setIdentity();
        v.transform_matrix.block<3, 1>(0, 0) = right;
        v.transform_matrix.block<3, 1>(0, 1) = up;
        v.transform_matrix.block<3, 1>(0, 2) = -forward;
        v.transform_matrix.block<3, 1>(0, 3) = pos;
        v.pose = pose_from_transform(v.transform_matrix, fov, res, res);
        v.file_path = "./r_" + std::to_string(k);
        v.image = Image(res, res);

        const Mat3 cam_to_world = v.pose.rotation().transpose();
        for (int y = 0; y < res; ++y) {
            for (int x = 0; x < res; ++x) {
                Vec3 acc = Vec3::Zero();
                for (int sy = 0; sy < ss; ++sy) {
                    for (int sx = 0; sx < ss; ++sx) {
                        const double u = x + (sx + 0.5) / ss - 0.5;
                        const double w = y + (sy + 0.5) / ss - 0.5;
                        const Vec3 dir = (cam_to_world * Vec3((u - v.pose.cx) / v.pose.fx, (w - v.pose.cy) / v.pose.fy, 1.0)).normalized();
                        Hit best;
                        for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
                            const Primitive& p = spec.primitives[i];
                            double t;
                            Vec3 n;
                            const bool hit = p.kind == PrimitiveKind::Sphere ? intersect_sphere(pos, dir, p, t, n)
                                                                              : intersect_box(pos, dir, p, t, n);
                            if (hit && t < best.t) best = {t, n, static_cast<int>(i)};
                        }
                        acc += best.primitive < 0 ? spec.background
                                                  : shade(spec.primitives[best.primitive], pos + best.t * dir, best.normal,
                                                          phases[best.primitive]);
                    }
                }
                acc /= static_cast<double>(ss * ss);
                for (int c = 0; c < 3; ++c) v.image.at(x, y, c) = std::clamp(acc[c], 0.0, 1.0);
            }
        }
        ds.views.push_back(std::move(v));
    }
    return ds;
}

namespace {
json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec_from(const json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }
} // namespace

json to_json(const SceneSpec& spec) {
    json prims = json::array();
    for (const auto& p : spec.primitives) {
        prims.push_back({{"kind", p.kind == PrimitiveKind::Sphere ? "sphere" : "box"},
                         {"center", vec_json(p.center)},
                         {"size", vec_json(p.size)},
                         {"rgb", vec_json(p.rgb)},
                         {"texture_frequency", p.texture_frequency}});
    }
    return {{"name", spec.name},
            {"primitives", prims},
            {"n_views", spec.n_views},
            {"resolution", spec.resolution},
            {"camera_radius", spec.camera_radius},
            {"elevation_deg", spec.elevation_deg},
            {"fov_deg", spec.fov_deg},
            {"supersample", spec.supersample},
            {"background", vec_json(spec.background)},
            {"seed", spec.seed}};
}

SceneSpec scene_spec_from_json(const json& j) {
    SceneSpec s;
    try {
        s.name = j.value("name", s.name);
        s.n_views = j.value("n_views", s.n_views);
        s.resolution = j.value("resolution", s.resolution);
        s.camera_radius = j.value("camera_radius", s.camera_radius);
        s.elevation_deg = j.value("elevation_deg", s.elevation_deg);
        s.fov_deg = j.value("fov_deg", s.fov_deg);
        s.supersample = j.value("supersample", s.supersample);
        s.seed = j.value("seed", s.seed);
        if (j.contains("background")) s.background = vec_from(j.at("background"));
        if (j.contains("primitives")) {
            for (const auto& pj : j.at("primitives")) {
                Primitive p;
                const std::string kind = pj.value("kind", std::string("sphere"));
                if (kind == "sphere") {
                    p.kind = PrimitiveKind::Sphere;
                } else if (kind == "box") {
                    p.kind = PrimitiveKind::Box;
                } else {
                    throw InvalidArgument("unknown primitive kind: " + kind);
                }
                if (pj.contains("center")) p.center = vec_from(pj.at("center"));
                if (pj.contains("size")) {
                    const auto& sz = pj.at("size");
                    p.size = sz.is_number() ? Vec3::Constant(sz.get<double>()) : vec_from(sz);
                }
                if (pj.contains("rgb")) p.rgb = vec_from(pj.at("rgb"));
                p.texture_frequency = pj.value("texture_frequency", 0.0);
                s.primitives.push_back(p);
            }
        } else {
            s.primitives = standard_scene().primitives;
        }
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed scene spec: ") + e.what());
    }
    s.validate();
    return s;
}

} // namespace psplat

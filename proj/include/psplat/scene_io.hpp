#pragma once

#include "psplat/common.hpp"
#include "psplat/gaussian.hpp"
#include "psplat/image.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace psplat {

struct View {
    Image image;
    CameraPose pose;
    // Camera-to-world in the on-disk convention (x right, y up, looking down -z).
    // Kept verbatim so saved datasets carry bit-identical poses.
    Mat4 transform_matrix = Mat4::Identity();
    std::string file_path;

    EIGEN_MAKE_ALIGNED_OPERATOR_NEW
};

struct Dataset {
    std::string name;
    double camera_angle_x = 0.0;
    std::vector<View> views;

    std::size_t size() const { return views.size(); }

    // Radius of the bounding sphere of the camera centers (centered at their mean).
    double scene_extent() const;

    // Point closest, in least squares, to every camera's optical axis.
    Vec3 focus_point() const;

    // Throws InvalidArgument for an empty dataset or image/pose mismatch.
    void validate() const;
};

// Builds the internal pose from an on-disk camera-to-world matrix: the y and z
// axes of the rotation are flipped, then the rigid transform is inverted.
CameraPose pose_from_transform(const Mat4& camera_to_world, double camera_angle_x, int width, int height);

struct LoadOptions {
    Vec3 background = Vec3::Ones(); // alpha PNGs are composited over this
};

// Reads a NeRF-synthetic style directory (transforms.json + PNGs). `path` may
// also name the json file directly.
Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options = {});

// Writes transforms.json and one 8-bit PNG per view. When `attack` is given it
// is written verbatim as the attack.json sidecar.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                  const std::optional<nlohmann::json>& attack = std::nullopt);

// Rounds [0,1] to 8-bit, half away from zero.
std::uint8_t quantize_channel(double v);

// Every pixel snapped to the nearest 8-bit level, as a save/load round trip would.
Dataset quantized(const Dataset& dataset);

Image read_png(const std::filesystem::path& path, const Vec3& background = Vec3::Ones());
void write_png(const Image& image, const std::filesystem::path& path);

enum class PrimitiveKind { Sphere, Box };

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    Vec3 center = Vec3::Zero();
    Vec3 size = Vec3::Constant(0.5); // sphere: radius in x; box: half extents
    Vec3 rgb = Vec3::Constant(0.8);
    double texture_frequency = 0.0; // cycles per scene unit
};

struct SceneSpec {
    std::vector<Primitive> primitives;
    int n_views = 20;
    int resolution = 64;
    double camera_radius = 4.0;
    double elevation_deg = 20.0;
    double fov_deg = 40.0;
    int supersample = 2;
    Vec3 background = Vec3::Zero();
    std::uint64_t seed = 0;
    std::string name = "generated";

    void validate() const;
};

// Desk-scale scene: two spheres and a box with sinusoidal textures.
SceneSpec standard_scene(double texture_frequency = 4.0, std::uint64_t seed = 0);

// Ray-traced ground truth from n_views cameras on a ring around the origin.
Dataset gen_scene(const SceneSpec& spec);

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);

} // namespace psplat

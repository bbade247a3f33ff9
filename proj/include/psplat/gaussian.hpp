#pragma once

#include "psplat/common.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace psplat {

// Number of optimized scalars per Gaussian: mu(3) log_scale(3) opacity(1) rotation(4) color(3).
inline constexpr int kParamsPerGaussian = 14;

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCov2dRegularization = 0.3;

// Scalar count of the color coefficients for spherical-harmonics degree d.
constexpr int color_coefficient_count(int sh_degree) { return 3 * (sh_degree + 1) * (sh_degree + 1); }

struct Gaussian {
    Vec3 mu = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    double opacity_raw = 0.0;
    Vec4 rotation{1.0, 0.0, 0.0, 0.0}; // (w, x, y, z), normalized on use
    Vec3 color = Vec3::Zero();         // degree-0 coefficients
    std::vector<double> sh_rest;       // higher-degree coefficients; carried, never rendered

    EIGEN_MAKE_ALIGNED_OPERATOR_NEW
};

struct Activated {
    double opacity;
    Vec3 scales;
    Vec3 color;
};

Activated activate(const Gaussian& g);

double sigmoid(double x);
double logit(double p);

// Rotation matrix of a quaternion (w, x, y, z), normalized first.
Mat3 quaternion_to_rotation(const Vec4& q);

// Sigma = R diag(exp(s))^2 R^T. Throws InvalidArgument for a zero quaternion.
Mat3 build_covariance(const Vec3& log_scale, const Vec4& q);

// Adam moments for the packed parameter vector of one Gaussian.
struct AdamMoments {
    std::array<double, kParamsPerGaussian> m{};
    std::array<double, kParamsPerGaussian> v{};
};

// Running sum of view-space positional gradient norms and the number of
// views the Gaussian contributed to since the last density-control pass.
struct DensifyStats {
    double grad_accum = 0.0;
    int views = 0;

    double mean() const { return views > 0 ? grad_accum / views : 0.0; }
};

// The learnable set of Gaussians. Parameters, optimizer state and density
// statistics are kept index-aligned; mutation goes through this class.
class GaussianCloud {
public:
    explicit GaussianCloud(int sh_degree = 0) : sh_degree_(sh_degree) {}

    int sh_degree() const { return sh_degree_; }
    std::size_t size() const { return gaussians_.size(); }
    bool empty() const { return gaussians_.empty(); }

    const std::vector<Gaussian>& gaussians() const { return gaussians_; }
    const Gaussian& operator[](std::size_t i) const { return gaussians_[i]; }
    Gaussian& operator[](std::size_t i) { return gaussians_[i]; }

    AdamMoments& moments(std::size_t i) { return moments_[i]; }
    const AdamMoments& moments(std::size_t i) const { return moments_[i]; }
    DensifyStats& stats(std::size_t i) { return stats_[i]; }
    const DensifyStats& stats(std::size_t i) const { return stats_[i]; }

    // Global Adam step counter (bias correction is shared across Gaussians).
    long adam_step = 0;

    // Appends with zeroed moments and statistics.
    void push_back(Gaussian g);
    void push_back(Gaussian g, const AdamMoments& moments);

    // Keeps entries whose mask is true, preserving order.
    void keep(const std::vector<bool>& mask);

    void reset_stats();
    void reserve(std::size_t n);

private:
    int sh_degree_;
    std::vector<Gaussian> gaussians_;
    std::vector<AdamMoments> moments_;
    std::vector<DensifyStats> stats_;
};

// Pinhole camera. Internal convention: x right, y down, camera looks down +z.
struct CameraPose {
    Mat4 world_to_camera = Mat4::Identity();
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;

    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Vec3 center() const { return -rotation().transpose() * translation(); }

    // Throws InvalidArgument unless the rotation is orthonormal within 1e-5 and
    // intrinsics/dimensions are positive.
    void validate() const;

    friend bool operator==(const CameraPose&, const CameraPose&) = default;

    EIGEN_MAKE_ALIGNED_OPERATOR_NEW
};

struct Splat2D {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
    std::uint32_t source_index = 0;

    EIGEN_MAKE_ALIGNED_OPERATOR_NEW
};

// Intermediate quantities of the EWA projection, kept for the backward pass.
struct ProjectionTerms {
    Mat3 view_rotation;   // W
    Vec3 cam_point;       // t = W mu + translation
    Mat3 rotation;        // R(q)
    Vec3 scales;          // exp(s)
    Mat3 cov3d;           // Sigma
    Mat23 jacobian;       // J at t
    Mat2 cov2d;           // J W Sigma W^T J^T + reg I
    Vec2 mean2d;
};

// Projects into screen space; absent when the camera-space depth is at or
// behind the near plane. The Jacobian is linearized at the Gaussian mean.
std::optional<Splat2D> project_gaussian(const Gaussian& g, const CameraPose& pose);

// Same projection, exposing the intermediates. Returns false when culled.
bool project_terms(const Gaussian& g, const CameraPose& pose, ProjectionTerms& out);

} // namespace psplat

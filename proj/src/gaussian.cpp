#include "psplat/gaussian.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace psplat {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

Activated activate(const Gaussian& g) {
    Activated a;
    a.opacity = sigmoid(g.opacity_raw);
    a.scales = g.log_scale.array().exp();
    a.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
    return a;
}

Mat3 quaternion_to_rotation(const Vec4& q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw InvalidArgument("quaternion has zero or non-finite norm");
    }
    const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 build_covariance(const Vec3& log_scale, const Vec4& q) {
    const Mat3 r = quaternion_to_rotation(q);
    const Vec3 var = (2.0 * log_scale).array().exp();
    Mat3 sigma = r * var.asDiagonal() * r.transpose();
    // exact symmetry
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    return sigma;
}

void GaussianCloud::push_back(Gaussian g) { push_back(std::move(g), AdamMoments{}); }

void GaussianCloud::push_back(Gaussian g, const AdamMoments& moments) {
    gaussians_.push_back(std::move(g));
    moments_.push_back(moments);
    stats_.push_back(DensifyStats{});
}

void GaussianCloud::keep(const std::vector<bool>& mask) {
    if (mask.size() != gaussians_.size()) {
        throw InvalidArgument("keep mask length does not match the cloud");
    }
    std::size_t out = 0;
    for (std::size_t i = 0; i < gaussians_.size(); ++i) {
        if (!mask[i]) continue;
        if (out != i) {
            gaussians_[out] = std::move(gaussians_[i]);
            moments_[out] = moments_[i];
            stats_[out] = stats_[i];
        }
        ++out;
    }
    gaussians_.resize(out);
    moments_.resize(out);
    stats_.resize(out);
}

void GaussianCloud::reset_stats() { std::fill(stats_.begin(), stats_.end(), DensifyStats{}); }

void GaussianCloud::reserve(std::size_t n) {
    gaussians_.reserve(n);
    moments_.reserve(n);
    stats_.reserve(n);
}

void CameraPose::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("camera focal lengths must be positive");
    if (width < 1 || height < 1) throw InvalidArgument("camera dimensions must be at least 1 pixel");
    if (!world_to_camera.allFinite()) throw InvalidArgument("camera transform is not finite");
    const Mat3 r = rotation();
    const double err = (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(err < 1e-5)) throw InvalidArgument("camera rotation is not orthonormal");
}

bool project_terms(const Gaussian& g, const CameraPose& pose, ProjectionTerms& out) {
    out.view_rotation = pose.rotation();
    out.cam_point = out.view_rotation * g.mu + pose.translation();
    const double tz = out.cam_point.z();
    if (!(tz > kNearPlane)) return false;
    const double tx = out.cam_point.x(), ty = out.cam_point.y();

    out.rotation = quaternion_to_rotation(g.rotation);
    out.scales = g.log_scale.array().exp();
    out.cov3d = out.rotation * out.scales.cwiseAbs2().asDiagonal() * out.rotation.transpose();

    const double inv_z = 1.0 / tz;
    out.jacobian << pose.fx * inv_z, 0.0, -pose.fx * tx * inv_z * inv_z,
                    0.0, pose.fy * inv_z, -pose.fy * ty * inv_z * inv_z;
    const Mat23 m = out.jacobian * out.view_rotation;
    Mat2 cov = m * out.cov3d * m.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += kCov2dRegularization;
    cov(1, 1) += kCov2dRegularization;
    out.cov2d = cov;
    out.mean2d = Vec2(pose.fx * tx * inv_z + pose.cx, pose.fy * ty * inv_z + pose.cy);
    return true;
}

std::optional<Splat2D> project_gaussian(const Gaussian& g, const CameraPose& pose) {
    ProjectionTerms terms;
    if (!project_terms(g, pose, terms)) return std::nullopt;
    const Activated a = activate(g);
    Splat2D s;
    s.mean = terms.mean2d;
    s.cov = terms.cov2d;
    s.depth = terms.cam_point.z();
    s.color = a.color;
    s.opacity = a.opacity;
    return s;
}

} // namespace psplat

#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace psplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

// Bad caller input: shapes, parameters or configuration outside their domain.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Filesystem / decoding failures on datasets, checkpoints and reports.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace psplat

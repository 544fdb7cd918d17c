#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mmfit {

/// Below this angle (radians) the exponential map and its derivatives use a
/// second-order series instead of the closed form.
inline constexpr double kSmallAngle = 1e-6;

Eigen::Matrix3d skew(const Eigen::Vector3d &v);

/// Rodrigues exponential map: axis-angle vector -> rotation matrix.
Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d &aa);

/// Partial derivatives dR/daa_k, k = 0..2, of the exponential map.
std::array<Eigen::Matrix3d, 3> axis_angle_jacobian(const Eigen::Vector3d &aa);

/// Logarithm map. Returned angle lies in [0, pi].
Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d &R);

Eigen::Quaterniond axis_angle_to_quaternion(const Eigen::Vector3d &aa);
Eigen::Vector3d quaternion_to_axis_angle(const Eigen::Quaterniond &q);

/// Shortest-arc spherical interpolation between two axis-angle rotations.
Eigen::Vector3d slerp_axis_angle(const Eigen::Vector3d &a, const Eigen::Vector3d &b,
                                 double t);

/// Geodesic angle (radians) between two rotation matrices.
double rotation_angle_between(const Eigen::Matrix3d &a, const Eigen::Matrix3d &b);

/// True when R is orthonormal with determinant +1 within tol.
bool is_rotation(const Eigen::Matrix3d &R, double tol = 1e-6);

}  // namespace mmfit

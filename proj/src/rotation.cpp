#include "mmfit/rotation.hpp"

#include <algorithm>
#include <cmath>

namespace mmfit {

Eigen::Matrix3d skew(const Eigen::Vector3d &v) {
  Eigen::Matrix3d S;
  S << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return S;
}

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d &aa) {
  const double angle = aa.norm();
  const Eigen::Matrix3d K = skew(aa);
  if (angle < kSmallAngle) {
    return Eigen::Matrix3d::Identity() + K + 0.5 * K * K;
  }
  const double a = std::sin(angle) / angle;
  const double b = (1.0 - std::cos(angle)) / (angle * angle);
  return Eigen::Matrix3d::Identity() + a * K + b * K * K;
}

std::array<Eigen::Matrix3d, 3> axis_angle_jacobian(const Eigen::Vector3d &aa) {
  std::array<Eigen::Matrix3d, 3> d;
  const double sq = aa.squaredNorm();
  const Eigen::Matrix3d K = skew(aa);
  if (std::sqrt(sq) < kSmallAngle) {
    for (int k = 0; k < 3; ++k) {
      const Eigen::Matrix3d E = skew(Eigen::Vector3d::Unit(k));
      d[k] = E + 0.5 * (E * K + K * E);
    }
    return d;
  }
  // dR/dv_k = (v_k [v]x + [v x (I - R) e_k]x) R / |v|^2
  const Eigen::Matrix3d R = axis_angle_to_matrix(aa);
  const Eigen::Matrix3d I_R = Eigen::Matrix3d::Identity() - R;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d c = aa.cross(I_R.col(k));
    d[k] = (aa[k] * K + skew(c)) * R / sq;
  }
  return d;
}

Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d &R) {
  const Eigen::AngleAxisd aa(R);
  return aa.axis() * aa.angle();
}

Eigen::Quaterniond axis_angle_to_quaternion(const Eigen::Vector3d &aa) {
  const double angle = aa.norm();
  if (angle < kSmallAngle) {
    Eigen::Quaterniond q(1.0, 0.5 * aa.x(), 0.5 * aa.y(), 0.5 * aa.z());
    q.normalize();
    return q;
  }
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, aa / angle));
}

Eigen::Vector3d quaternion_to_axis_angle(const Eigen::Quaterniond &q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double s = q.vec().norm();
  if (s < 1e-12) return 2.0 * q.vec();
  const double angle = 2.0 * std::atan2(s, q.w());
  return q.vec() / s * angle;
}

Eigen::Vector3d slerp_axis_angle(const Eigen::Vector3d &a, const Eigen::Vector3d &b,
                                 double t) {
  Eigen::Quaterniond qa = axis_angle_to_quaternion(a);
  Eigen::Quaterniond qb = axis_angle_to_quaternion(b);
  if (qa.dot(qb) < 0.0) qb.coeffs() = -qb.coeffs();
  const double cos_half = std::clamp(qa.dot(qb), -1.0, 1.0);
  Eigen::Quaterniond q;
  if (cos_half > 1.0 - 1e-12) {
    q.coeffs() = (1.0 - t) * qa.coeffs() + t * qb.coeffs();
  } else {
    const double half = std::acos(cos_half);
    const double s = std::sin(half);
    q.coeffs() = (std::sin((1.0 - t) * half) / s) * qa.coeffs() +
                 (std::sin(t * half) / s) * qb.coeffs();
  }
  return quaternion_to_axis_angle(q);
}

double rotation_angle_between(const Eigen::Matrix3d &a, const Eigen::Matrix3d &b) {
  const Eigen::Matrix3d rel = a.transpose() * b;
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  // acos loses precision near 0; use the skew part instead.
  const Eigen::Vector3d w(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0),
                          rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * w.norm(), c);
}

bool is_rotation(const Eigen::Matrix3d &R, double tol) {
  if (!R.allFinite()) return false;
  if ((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) {
    return false;
  }
  return std::abs(R.determinant() - 1.0) <= tol;
}

}  // namespace mmfit

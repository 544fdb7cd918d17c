#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace mmfit {

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// J x 3 joint positions with optional per-joint confidence in [0, 1].
struct PoseSkeleton3D {
  Points3 joints;
  std::vector<double> confidence;

  int num_joints() const { return static_cast<int>(joints.rows()); }
};

/// Linear-blend-skinning body model in SMPL layout.
///
/// Joints are ordered so that parents[j] < j for every j > 0 and
/// parents[0] == -1. Shape directions are stored as a (3V x 10) matrix whose
/// row 3*i + d is coordinate d of vertex i.
struct BodyModel {
  static constexpr int kShapeDims = 10;

  Points3 template_vertices;      // V x 3
  Eigen::MatrixXd joint_regressor;  // J x V
  Eigen::MatrixXd skin_weights;     // V x J
  Eigen::MatrixXd shape_dirs;       // 3V x 10
  std::vector<int> parents;         // J
  std::vector<Eigen::Vector3i> faces;
  /// Optional pose-corrective blendshapes, 3V x 9(J-1), driven by the
  /// row-major entries of (R_j - I) for j = 1..J-1.
  std::optional<Eigen::MatrixXd> pose_dirs;

  int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
  int num_joints() const { return static_cast<int>(parents.size()); }
  int pose_dims() const { return 3 * num_joints(); }

  /// Throws mmfit::Error on any shape or invariant violation.
  void validate() const;
};

struct PosedBody {
  Points3 joints;    // J x 3
  Points3 vertices;  // V x 3
};

/// Intermediate quantities of one forward evaluation, kept for backprop.
struct ForwardCache {
  Points3 shaped;    // template + shape offsets
  Points3 posed_rest;  // shaped + pose correctives
  Points3 rest_joints;
  std::vector<Eigen::Matrix3d> local_rot;
  std::vector<Eigen::Matrix3d> global_rot;
  std::vector<Eigen::Vector3d> joint_shift;  // posed joint - rest joint
};

struct ParamGradient {
  Eigen::VectorXd beta;   // 10
  Eigen::VectorXd theta;  // 3J
  Eigen::Vector3d r = Eigen::Vector3d::Zero();
};

/// Forward map (beta, theta, r) -> posed joints and vertices.
PosedBody forward(const BodyModel &model, const Eigen::VectorXd &beta,
                  const Eigen::VectorXd &theta, const Eigen::Vector3d &r,
                  ForwardCache *cache = nullptr);

/// Vector-Jacobian product: given dL/djoints and dL/dvertices (either may
/// be empty to mean zero), returns dL/d(beta, theta, r).
ParamGradient backprop(const BodyModel &model, const Eigen::VectorXd &theta,
                       const ForwardCache &cache, const Points3 &joint_grad,
                       const Points3 &vertex_grad);

/// Root orientation: the first three pose components.
Eigen::Vector3d root_orient(const Eigen::VectorXd &theta);

/// Deterministic synthetic body model with a tubular mesh around every bone.
/// J == 24 gives an SMPL-like humanoid tree (z up); other J give a chain.
BodyModel make_toy_model(std::uint64_t seed, int num_vertices, int num_joints);

/// Binary model file: "MMFITBM1", uint32 LE header length, JSON header, then
/// float32 LE blob. Header: {V, J, pose_dims, parents, faces?, sections:
/// {name: {offset, count}}} with offsets in bytes from the blob start.
BodyModel load_body_model(const std::filesystem::path &path);
void save_body_model(const std::filesystem::path &path, const BodyModel &model);

}  // namespace mmfit

#include "mmfit/body_model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "mmfit/error.hpp"
#include "mmfit/rotation.hpp"

namespace mmfit {

namespace {

using Row12 = Eigen::Matrix<double, Eigen::Dynamic, 12, Eigen::RowMajor>;

Eigen::Map<const Eigen::VectorXd> flat(const Points3 &p) {
  return {p.data(), p.size()};
}

}  // namespace

void BodyModel::validate() const {
  const int V = num_vertices();
  const int J = num_joints();
  if (V < 1 || J < 1) throw Error("body model: needs at least one vertex and one joint");
  if (joint_regressor.rows() != J || joint_regressor.cols() != V) {
    throw Error("body model: joint_regressor must be J x V");
  }
  if (skin_weights.rows() != V || skin_weights.cols() != J) {
    throw Error("body model: skin_weights must be V x J");
  }
  if (shape_dirs.rows() != 3 * V || shape_dirs.cols() != kShapeDims) {
    throw Error("body model: shape_dirs must be 3V x 10");
  }
  if (!template_vertices.allFinite() || !joint_regressor.allFinite() ||
      !skin_weights.allFinite() || !shape_dirs.allFinite()) {
    throw Error("body model: non-finite entries");
  }
  if (parents[0] != -1) throw Error("body model: parents[0] must be -1");
  for (int j = 1; j < J; ++j) {
    if (parents[j] < 0 || parents[j] >= j) {
      throw Error("body model: parents[" + std::to_string(j) + "] must lie in [0, " +
                  std::to_string(j) + ")");
    }
  }
  for (int j = 0; j < J; ++j) {
    if (std::abs(joint_regressor.row(j).sum() - 1.0) > 1e-6) {
      throw Error("body model: regressor row " + std::to_string(j) + " does not sum to 1");
    }
  }
  if ((skin_weights.array() < 0.0).any()) throw Error("body model: negative skin weight");
  for (int i = 0; i < V; ++i) {
    if (std::abs(skin_weights.row(i).sum() - 1.0) > 1e-6) {
      throw Error("body model: skin weight row " + std::to_string(i) + " does not sum to 1");
    }
  }
  for (const auto &f : faces) {
    if ((f.array() < 0).any() || (f.array() >= V).any()) {
      throw Error("body model: face index out of range");
    }
  }
  if (pose_dirs) {
    if (pose_dirs->rows() != 3 * V || pose_dirs->cols() != 9 * (J - 1)) {
      throw Error("body model: pose_dirs must be 3V x 9(J-1)");
    }
    if (!pose_dirs->allFinite()) throw Error("body model: non-finite pose_dirs");
  }
}

Eigen::Vector3d root_orient(const Eigen::VectorXd &theta) { return theta.head<3>(); }

PosedBody forward(const BodyModel &model, const Eigen::VectorXd &beta,
                  const Eigen::VectorXd &theta, const Eigen::Vector3d &r,
                  ForwardCache *cache) {
  const int V = model.num_vertices();
  const int J = model.num_joints();
  if (beta.size() != BodyModel::kShapeDims) throw Error("forward: beta must have 10 entries");
  if (theta.size() != 3 * J) {
    throw Error("forward: theta must have " + std::to_string(3 * J) + " entries");
  }

  ForwardCache local;
  ForwardCache &c = cache ? *cache : local;

  c.shaped = model.template_vertices;
  Eigen::Map<Eigen::VectorXd>(c.shaped.data(), 3 * V) += model.shape_dirs * beta;

  c.local_rot.resize(J);
  for (int j = 0; j < J; ++j) c.local_rot[j] = axis_angle_to_matrix(theta.segment<3>(3 * j));

  c.posed_rest = c.shaped;
  if (model.pose_dirs) {
    Eigen::VectorXd feat(9 * (J - 1));
    for (int j = 1; j < J; ++j) {
      const Eigen::Matrix3d D = c.local_rot[j] - Eigen::Matrix3d::Identity();
      for (int e = 0; e < 9; ++e) feat[9 * (j - 1) + e] = D(e / 3, e % 3);
    }
    Eigen::Map<Eigen::VectorXd>(c.posed_rest.data(), 3 * V) += *model.pose_dirs * feat;
  }

  c.rest_joints = model.joint_regressor * c.shaped;

  // Chain in displacement form so the zero pose reproduces the rest
  // configuration exactly.
  c.global_rot.resize(J);
  c.joint_shift.assign(J, Eigen::Vector3d::Zero());
  c.global_rot[0] = c.local_rot[0];
  for (int j = 1; j < J; ++j) {
    const int p = model.parents[j];
    const Eigen::Vector3d bone = (c.rest_joints.row(j) - c.rest_joints.row(p)).transpose();
    c.joint_shift[j] = (c.global_rot[p] - Eigen::Matrix3d::Identity()) * bone + c.joint_shift[p];
    c.global_rot[j] = c.global_rot[p] * c.local_rot[j];
  }

  // Per joint: M = A - I (row-major 9) and b = d - M * rest_joint (3).
  Row12 per_joint(J, 12);
  for (int j = 0; j < J; ++j) {
    const Eigen::Matrix3d M = c.global_rot[j] - Eigen::Matrix3d::Identity();
    const Eigen::Vector3d b = c.joint_shift[j] - M * c.rest_joints.row(j).transpose();
    for (int e = 0; e < 9; ++e) per_joint(j, e) = M(e / 3, e % 3);
    per_joint.row(j).tail<3>() = b.transpose();
  }
  const Row12 blended = model.skin_weights * per_joint;

  PosedBody out;
  out.vertices.resize(V, 3);
  for (int i = 0; i < V; ++i) {
    const Eigen::Vector3d vp = c.posed_rest.row(i).transpose();
    Eigen::Matrix3d B;
    for (int e = 0; e < 9; ++e) B(e / 3, e % 3) = blended(i, e);
    const Eigen::Vector3d cvec = blended.row(i).tail<3>().transpose();
    out.vertices.row(i) = (vp + B * vp + cvec + r).transpose();
  }
  out.joints.resize(J, 3);
  for (int j = 0; j < J; ++j) {
    out.joints.row(j) = c.rest_joints.row(j) + c.joint_shift[j].transpose() + r.transpose();
  }
  return out;
}

ParamGradient backprop(const BodyModel &model, const Eigen::VectorXd &theta,
                       const ForwardCache &c, const Points3 &joint_grad,
                       const Points3 &vertex_grad) {
  const int V = model.num_vertices();
  const int J = model.num_joints();
  const bool have_v = vertex_grad.rows() > 0;
  const bool have_j = joint_grad.rows() > 0;
  if (have_v && vertex_grad.rows() != V) throw Error("backprop: vertex gradient must be V x 3");
  if (have_j && joint_grad.rows() != J) throw Error("backprop: joint gradient must be J x 3");

  ParamGradient g;
  g.beta = Eigen::VectorXd::Zero(BodyModel::kShapeDims);
  g.theta = Eigen::VectorXd::Zero(3 * J);

  std::vector<Eigen::Matrix3d> gA(J, Eigen::Matrix3d::Zero());
  std::vector<Eigen::Matrix3d> gR(J, Eigen::Matrix3d::Zero());
  std::vector<Eigen::Vector3d> gd(J, Eigen::Vector3d::Zero());
  Points3 g_rest_joints = Points3::Zero(J, 3);
  Points3 g_posed_rest = Points3::Zero(V, 3);

  std::vector<Eigen::Matrix3d> M(J);
  for (int j = 0; j < J; ++j) M[j] = c.global_rot[j] - Eigen::Matrix3d::Identity();

  if (have_v) {
    // Recompute the blended per-vertex matrices B_i = sum_j w_ij M_j.
    Row12 per_joint = Row12::Zero(J, 12);
    for (int j = 0; j < J; ++j)
      for (int e = 0; e < 9; ++e) per_joint(j, e) = M[j](e / 3, e % 3);
    const Row12 blended = model.skin_weights * per_joint;

    // Per-vertex outer products gV vp^T (9) and gV (3).
    Row12 per_vertex(V, 12);
    for (int i = 0; i < V; ++i) {
      const Eigen::Vector3d gv = vertex_grad.row(i).transpose();
      const Eigen::Vector3d vp = c.posed_rest.row(i).transpose();
      const Eigen::Matrix3d outer = gv * vp.transpose();
      for (int e = 0; e < 9; ++e) per_vertex(i, e) = outer(e / 3, e % 3);
      per_vertex.row(i).tail<3>() = gv.transpose();
      Eigen::Matrix3d B;
      for (int e = 0; e < 9; ++e) B(e / 3, e % 3) = blended(i, e);
      g_posed_rest.row(i) = (gv + B.transpose() * gv).transpose();
      g.r += gv;
    }
    const Row12 per_joint_grad = model.skin_weights.transpose() * per_vertex;
    for (int j = 0; j < J; ++j) {
      Eigen::Matrix3d gM;
      for (int e = 0; e < 9; ++e) gM(e / 3, e % 3) = per_joint_grad(j, e);
      const Eigen::Vector3d gb = per_joint_grad.row(j).tail<3>().transpose();
      const Eigen::Vector3d Jr = c.rest_joints.row(j).transpose();
      // b_j = d_j - M_j Jr_j
      gd[j] += gb;
      gM -= gb * Jr.transpose();
      g_rest_joints.row(j) -= (M[j].transpose() * gb).transpose();
      gA[j] += gM;
    }
  }

  if (have_j) {
    for (int j = 0; j < J; ++j) {
      const Eigen::Vector3d gj = joint_grad.row(j).transpose();
      gd[j] += gj;
      g_rest_joints.row(j) += gj.transpose();
      g.r += gj;
    }
  }

  for (int j = J - 1; j >= 1; --j) {
    const int p = model.parents[j];
    const Eigen::Vector3d bone = (c.rest_joints.row(j) - c.rest_joints.row(p)).transpose();
    gA[p] += gd[j] * bone.transpose();
    const Eigen::Vector3d back = M[p].transpose() * gd[j];
    g_rest_joints.row(j) += back.transpose();
    g_rest_joints.row(p) -= back.transpose();
    gd[p] += gd[j];
    gA[p] += gA[j] * c.local_rot[j].transpose();
    gR[j] += c.global_rot[p].transpose() * gA[j];
  }
  gR[0] += gA[0];

  Points3 g_shaped = g_posed_rest;
  if (model.pose_dirs && have_v) {
    const Eigen::VectorXd gfeat = model.pose_dirs->transpose() * flat(g_posed_rest);
    for (int j = 1; j < J; ++j)
      for (int e = 0; e < 9; ++e) gR[j](e / 3, e % 3) += gfeat[9 * (j - 1) + e];
  }
  g_shaped += model.joint_regressor.transpose() * g_rest_joints;
  g.beta = model.shape_dirs.transpose() * flat(g_shaped);

  for (int j = 0; j < J; ++j) {
    const auto dR = axis_angle_jacobian(theta.segment<3>(3 * j));
    for (int k = 0; k < 3; ++k) g.theta[3 * j + k] = gR[j].cwiseProduct(dR[k]).sum();
  }
  return g;
}

namespace {

// Humanoid rest offsets (child - parent), z up, +x to the body's left.
struct JointSpec {
  int parent;
  double x, y, z;
};

constexpr JointSpec kHumanoid[24] = {
    {-1, 0.0, 0.0, 0.0},      // pelvis
    {0, 0.09, 0.0, -0.08},    // left hip
    {0, -0.09, 0.0, -0.08},   // right hip
    {0, 0.0, 0.0, 0.11},      // spine 1
    {1, 0.01, 0.0, -0.38},    // left knee
    {2, -0.01, 0.0, -0.38},   // right knee
    {3, 0.0, 0.0, 0.13},      // spine 2
    {4, 0.0, -0.02, -0.40},   // left ankle
    {5, 0.0, -0.02, -0.40},   // right ankle
    {6, 0.0, 0.0, 0.06},      // spine 3
    {7, 0.0, 0.12, -0.05},    // left foot
    {8, 0.0, 0.12, -0.05},    // right foot
    {9, 0.0, 0.0, 0.21},      // neck
    {9, 0.07, 0.0, 0.12},     // left collar
    {9, -0.07, 0.0, 0.12},    // right collar
    {12, 0.0, 0.02, 0.10},    // head
    {13, 0.11, 0.0, 0.03},    // left shoulder
    {14, -0.11, 0.0, 0.03},   // right shoulder
    {16, 0.26, 0.0, 0.0},     // left elbow
    {17, -0.26, 0.0, 0.0},    // right elbow
    {18, 0.25, 0.0, 0.0},     // left wrist
    {19, -0.25, 0.0, 0.0},    // right wrist
    {20, 0.08, 0.0, 0.0},     // left hand
    {21, -0.08, 0.0, 0.0},    // right hand
};

}  // namespace

BodyModel make_toy_model(std::uint64_t seed, int V, int J) {
  if (J < 2 || V < J) throw Error("make_toy_model: requires V >= J >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  BodyModel m;
  m.parents.resize(J);
  std::vector<Eigen::Vector3d> joints(J);
  for (int j = 0; j < J; ++j) {
    Eigen::Vector3d offset;
    if (J == 24) {
      m.parents[j] = kHumanoid[j].parent;
      offset = Eigen::Vector3d(kHumanoid[j].x, kHumanoid[j].y, kHumanoid[j].z);
    } else {
      m.parents[j] = j - 1;
      offset = Eigen::Vector3d((j % 2 ? 0.05 : -0.05), 0.0, 0.2);
    }
    if (j == 0) {
      joints[j] = Eigen::Vector3d::Zero();
    } else {
      const Eigen::Vector3d jitter(normal(rng), normal(rng), normal(rng));
      joints[j] = joints[m.parents[j]] + offset + 0.005 * jitter;
    }
  }

  // Vertices are spread over bones (parent -> child) on a helix of six
  // vertices per turn; consecutive turns are stitched into triangles.
  const int bones = J - 1;
  std::vector<int> bone_of(V), index_in_bone(V);
  std::vector<int> bone_count(bones, V / bones);
  for (int b = 0; b < V % bones; ++b) ++bone_count[b];
  {
    int i = 0;
    for (int b = 0; b < bones; ++b)
      for (int k = 0; k < bone_count[b]; ++k, ++i) {
        bone_of[i] = b;
        index_in_bone[i] = k;
      }
  }

  m.template_vertices.resize(V, 3);
  m.skin_weights = Eigen::MatrixXd::Zero(V, J);
  m.shape_dirs = Eigen::MatrixXd::Zero(3 * V, BodyModel::kShapeDims);
  std::vector<double> along(V);
  std::vector<Eigen::Vector3d> radial(V);

  // Random per-joint displacement chains for shape components 2..9.
  std::vector<std::vector<Eigen::Vector3d>> chains(BodyModel::kShapeDims,
                                                   std::vector<Eigen::Vector3d>(J, Eigen::Vector3d::Zero()));
  for (int s = 2; s < BodyModel::kShapeDims; ++s)
    for (int j = 1; j < J; ++j)
      chains[s][j] = chains[s][m.parents[j]] +
                     0.01 * Eigen::Vector3d(normal(rng), normal(rng), normal(rng));

  std::vector<double> radius(bones);
  for (int b = 0; b < bones; ++b) radius[b] = 0.045 + 0.01 * std::abs(normal(rng));

  for (int i = 0; i < V; ++i) {
    const int b = bone_of[i];
    const int child = b + 1;
    const int parent = m.parents[child];
    const int n = bone_count[b];
    const double s = (index_in_bone[i] + 0.5) / n;
    const Eigen::Vector3d axis = (joints[child] - joints[parent]).normalized();
    Eigen::Vector3d u = axis.cross(std::abs(axis.z()) < 0.9 ? Eigen::Vector3d::UnitZ()
                                                            : Eigen::Vector3d::UnitX());
    u.normalize();
    const Eigen::Vector3d v = axis.cross(u);
    const double phi = 2.0 * M_PI * (index_in_bone[i] % 6) / 6.0;
    radial[i] = std::cos(phi) * u + std::sin(phi) * v;
    along[i] = s;
    const Eigen::Vector3d center = (1.0 - s) * joints[parent] + s * joints[child];
    m.template_vertices.row(i) = (center + radius[b] * radial[i]).transpose();
    m.skin_weights(i, parent) = 1.0 - 0.5 * s;
    m.skin_weights(i, child) = 0.5 * s;

    const Eigen::Vector3d scale_dir = 0.05 * (m.template_vertices.row(i).transpose() - joints[0]);
    const Eigen::Vector3d thick_dir = 0.01 * radial[i];
    for (int d = 0; d < 3; ++d) {
      m.shape_dirs(3 * i + d, 0) = scale_dir[d];
      m.shape_dirs(3 * i + d, 1) = thick_dir[d];
      for (int sd = 2; sd < BodyModel::kShapeDims; ++sd) {
        m.shape_dirs(3 * i + d, sd) = (1.0 - s) * chains[sd][parent][d] + s * chains[sd][child][d];
      }
    }
  }

  for (int i = 0, b = 0; b < bones; i += bone_count[b], ++b) {
    for (int k = 0; k + 7 < bone_count[b]; ++k) {
      m.faces.emplace_back(i + k, i + k + 1, i + k + 6);
      m.faces.emplace_back(i + k + 1, i + k + 7, i + k + 6);
    }
  }

  // Each joint regresses from nearby vertices of its incident bones.
  m.joint_regressor = Eigen::MatrixXd::Zero(J, V);
  for (int j = 0; j < J; ++j) {
    for (int i = 0; i < V; ++i) {
      const int child = bone_of[i] + 1;
      const int parent = m.parents[child];
      double w = 0.0;
      if (child == j) w = std::exp(-std::pow((1.0 - along[i]) / 0.3, 2));
      if (parent == j) w = std::exp(-std::pow(along[i] / 0.3, 2));
      m.joint_regressor(j, i) = w;
    }
    const double total = m.joint_regressor.row(j).sum();
    if (total <= 0.0) {
      // Fewer vertices than bones reached this joint: fall back to the
      // nearest vertex.
      int best = 0;
      double best_d = 1e300;
      for (int i = 0; i < V; ++i) {
        const double d = (m.template_vertices.row(i).transpose() - joints[j]).squaredNorm();
        if (d < best_d) best_d = d, best = i;
      }
      m.joint_regressor(j, best) = 1.0;
    } else {
      m.joint_regressor.row(j) /= total;
    }
  }

  m.validate();
  return m;
}

}  // namespace mmfit

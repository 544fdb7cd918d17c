#include "mmfit/nearest.hpp"

#include <algorithm>
#include <limits>

namespace mmfit {

namespace {

constexpr int kLeafSize = 12;

void consider(const Eigen::Vector3d &p, int index, const Eigen::Vector3d &q,
              NearestNeighbors::Hit &best) {
  const double d = (p - q).squaredNorm();
  if (d < best.squared_distance || (d == best.squared_distance && index < best.index)) {
    best.squared_distance = d;
    best.index = index;
  }
}

}  // namespace

NearestNeighbors::NearestNeighbors(std::vector<Eigen::Vector3d> points) : points_(std::move(points)) {
  if (size() < kBruteForceBelow) return;
  order_.resize(points_.size());
  for (int i = 0; i < size(); ++i) order_[i] = i;
  nodes_.reserve(2 * size() / kLeafSize + 1);
  build(0, size());
}

int NearestNeighbors::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (int k = begin; k < end; ++k) {
    lo = lo.cwiseMin(points_[order_[k]]);
    hi = hi.cwiseMax(points_[order_[k]]);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node &n = nodes_[id];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void NearestNeighbors::search(int id, const Eigen::Vector3d &q, Hit &best) const {
  const Node &n = nodes_[id];
  if (n.axis < 0) {
    for (int k = n.begin; k < n.end; ++k) consider(points_[order_[k]], order_[k], q, best);
    return;
  }
  // Left holds coordinates <= split, right holds coordinates >= split.
  const double diff = q[n.axis] - n.split;
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best);
  // Visit the far side on equality too, so lower-index ties are found.
  if (diff * diff <= best.squared_distance) search(far, q, best);
}

NearestNeighbors::Hit NearestNeighbors::query(const Eigen::Vector3d &q) const {
  Hit best{-1, std::numeric_limits<double>::infinity()};
  if (points_.empty()) return best;
  if (nodes_.empty()) {
    for (int i = 0; i < size(); ++i) consider(points_[i], i, q, best);
    return best;
  }
  search(0, q, best);
  return best;
}

}  // namespace mmfit

#pragma once

#include <vector>

#include <Eigen/Core>

namespace mmfit {

/// Exact nearest-neighbour queries over a fixed point set. Ties resolve to
/// the lowest point index, so results match a brute-force scan.
class NearestNeighbors {
 public:
  /// Sets smaller than this are scanned linearly.
  static constexpr int kBruteForceBelow = 256;

  NearestNeighbors() = default;
  explicit NearestNeighbors(std::vector<Eigen::Vector3d> points);

  struct Hit {
    int index = -1;
    double squared_distance = 0.0;
  };

  Hit query(const Eigen::Vector3d &q) const;
  int size() const { return static_cast<int>(points_.size()); }

 private:
  struct Node {
    int begin, end;  // range in order_
    int axis = -1;   // -1 for a leaf
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(int begin, int end);
  void search(int node, const Eigen::Vector3d &q, Hit &best) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace mmfit

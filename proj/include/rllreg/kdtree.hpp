#pragma once

#include <cstdint>
#include <vector>

#include "rllreg/geom.hpp"

namespace rllreg {

struct Neighbor {
  Eigen::Index index = -1;
  double squared_distance = 0.0;
};

/// Static 3-d tree over a borrowed point cloud. The cloud must outlive the tree.
class KdTree {
 public:
  explicit KdTree(const PointCloud& points, int leaf_size = 8);

  /// The k nearest points sorted by distance (ties by index). `exclude` drops
  /// one index from the result, typically the query point itself.
  std::vector<Neighbor> knn(const Point3& query, int k, Eigen::Index exclude = -1) const;
  Neighbor nearest(const Point3& query) const;

  Eigen::Index size() const { return points_.cols(); }

 private:
  struct Node {
    std::int32_t begin = 0, end = 0;  // range in order_
    std::int32_t left = -1, right = -1;
    std::int8_t axis = -1;
    double split = 0.0;
  };

  std::int32_t build(std::int32_t begin, std::int32_t end);
  void search(std::int32_t node, const Point3& q, int k, Eigen::Index exclude,
              std::vector<Neighbor>& heap) const;

  const PointCloud& points_;
  int leaf_size_;
  std::vector<Eigen::Index> order_;
  std::vector<Node> nodes_;
};

}  // namespace rllreg

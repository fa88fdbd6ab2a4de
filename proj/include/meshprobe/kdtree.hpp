#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

namespace meshprobe {

/// Static 3-d tree over a point set. Queries are exact; equal distances are
/// ordered by point index so results do not depend on tree layout.
class KdTree {
public:
    explicit KdTree(Eigen::MatrixX3d points);

    struct Neighbor {
        int index;
        double dist2;

        bool operator<(const Neighbor& o) const
        {
            return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
        }
    };

    /// k nearest points to `query`, sorted ascending; `exclude` (if >= 0) is
    /// skipped.
    std::vector<Neighbor> knn(const Eigen::Vector3d& query, int k, int exclude = -1) const;
    Neighbor nearest(const Eigen::Vector3d& query) const;

    const Eigen::MatrixX3d& points() const { return points_; }
    int size() const { return static_cast<int>(points_.rows()); }

private:
    struct Node {
        int begin, end; // range in order_
        int axis = -1;  // -1 for leaves
        double split = 0.0;
        int left = -1, right = -1;
    };

    int build(int begin, int end, int depth);
    void search(int node, const Eigen::Vector3d& q, int k, int exclude, std::vector<Neighbor>& heap) const;

    Eigen::MatrixX3d points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

} // namespace meshprobe

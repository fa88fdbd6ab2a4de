#include "meshprobe/kdtree.hpp"

#include <algorithm>
#include <limits>

namespace meshprobe {

namespace {
constexpr int kLeafSize = 12;
}

KdTree::KdTree(Eigen::MatrixX3d points) : points_(std::move(points))
{
    order_.resize(static_cast<std::size_t>(points_.rows()));
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.reserve(order_.size() / kLeafSize * 2 + 1);
    if (!order_.empty()) build(0, static_cast<int>(order_.size()), 0);
}

int KdTree::build(int begin, int end, int depth)
{
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;

    // split along the widest axis of the bounding box
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (int i = begin; i < end; ++i) {
        const Eigen::Vector3d p = points_.row(order_[static_cast<std::size_t>(i)]);
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] - lo[axis] <= 0.0) return id; // all coincident

    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
        const double pa = points_(a, axis), pb = points_(b, axis);
        return pa < pb || (pa == pb && a < b);
    });
    const double split = points_(order_[static_cast<std::size_t>(mid)], axis);
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    nodes_[static_cast<std::size_t>(id)].axis = axis;
    nodes_[static_cast<std::size_t>(id)].split = split;
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
}

void KdTree::search(int node_id, const Eigen::Vector3d& q, int k, int exclude, std::vector<Neighbor>& heap) const
{
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.axis < 0) {
        for (int i = node.begin; i < node.end; ++i) {
            const int idx = order_[static_cast<std::size_t>(i)];
            if (idx == exclude) continue;
            const Neighbor cand{idx, (points_.row(idx).transpose() - q).squaredNorm()};
            if (static_cast<int>(heap.size()) < k) {
                heap.push_back(cand);
                std::push_heap(heap.begin(), heap.end());
            } else if (cand < heap.front()) {
                std::pop_heap(heap.begin(), heap.end());
                heap.back() = cand;
                std::push_heap(heap.begin(), heap.end());
            }
        }
        return;
    }
    const double diff = q[node.axis] - node.split;
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    search(near, q, k, exclude, heap);
    // <= so that index ties across the split plane are still visited
    if (static_cast<int>(heap.size()) < k || diff * diff <= heap.front().dist2) search(far, q, k, exclude, heap);
}

std::vector<KdTree::Neighbor> KdTree::knn(const Eigen::Vector3d& query, int k, int exclude) const
{
    std::vector<Neighbor> heap;
    if (k <= 0 || nodes_.empty()) return heap;
    heap.reserve(static_cast<std::size_t>(k) + 1);
    search(0, query, k, exclude, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
}

KdTree::Neighbor KdTree::nearest(const Eigen::Vector3d& query) const
{
    const auto result = knn(query, 1);
    if (result.empty()) return {-1, std::numeric_limits<double>::infinity()};
    return result.front();
}

} // namespace meshprobe

#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace amb {

/**
 * \brief Static 3D kd-tree over a point array.
 *
 * The tree stores indices only; the point array must outlive it. Equal
 * distances resolve to the smaller point index, so results match a linear
 * scan exactly.
 */
class KdTree {
 public:
  struct Neighbor {
    std::size_t index = 0;
    double dist2 = std::numeric_limits<double>::infinity();
  };

  KdTree() = default;

  explicit KdTree(const std::vector<Eigen::Vector3d>& points) : points_(&points) {
    index_.resize(points.size());
    std::iota(index_.begin(), index_.end(), std::size_t{0});
    nodes_.reserve(2 * points.size() / kLeafSize + 1);
    if (!points.empty()) build(0, points.size());
  }

  std::size_t size() const { return index_.size(); }
  bool empty() const { return index_.empty(); }

  Neighbor nearest(const Eigen::Vector3d& q) const {
    if (empty()) throw std::logic_error("KdTree::nearest on empty tree");
    Neighbor best;
    search_nearest(0, q, best);
    return best;
  }

  /// The k nearest points sorted by increasing distance.
  std::vector<Neighbor> knn(const Eigen::Vector3d& q, std::size_t k) const {
    if (empty()) throw std::logic_error("KdTree::knn on empty tree");
    k = std::min(k, size());
    std::priority_queue<Neighbor, std::vector<Neighbor>, Worse> heap;
    search_knn(0, q, k, heap);
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top();
      heap.pop();
    }
    return out;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin, end;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  struct Worse {
    bool operator()(const Neighbor& a, const Neighbor& b) const { return better(a, b); }
  };

  static bool better(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }

  const Eigen::Vector3d& pt(std::size_t i) const { return (*points_)[i]; }

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    Eigen::Vector3d lo = pt(index_[begin]), hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(pt(index_[i]));
      hi = hi.cwiseMax(pt(index_[i]));
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(index_.begin() + static_cast<std::ptrdiff_t>(begin),
                     index_.begin() + static_cast<std::ptrdiff_t>(mid),
                     index_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return pt(a)[axis] < pt(b)[axis]; });
    const double split = pt(index_[mid])[axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    Node& n = nodes_[id];
    n.axis = axis;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
  }

  void search_nearest(std::size_t id, const Eigen::Vector3d& q, Neighbor& best) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const Neighbor c{index_[i], (pt(index_[i]) - q).squaredNorm()};
        if (better(c, best)) best = c;
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const std::size_t near = diff < 0.0 ? n.left : n.right;
    const std::size_t far = diff < 0.0 ? n.right : n.left;
    search_nearest(near, q, best);
    if (diff * diff <= best.dist2) search_nearest(far, q, best);
  }

  template <class Heap>
  void search_knn(std::size_t id, const Eigen::Vector3d& q, std::size_t k, Heap& heap) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const Neighbor c{index_[i], (pt(index_[i]) - q).squaredNorm()};
        if (heap.size() < k) {
          heap.push(c);
        } else if (better(c, heap.top())) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const std::size_t near = diff < 0.0 ? n.left : n.right;
    const std::size_t far = diff < 0.0 ? n.right : n.left;
    search_knn(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.top().dist2) search_knn(far, q, k, heap);
  }

  const std::vector<Eigen::Vector3d>* points_ = nullptr;
  std::vector<std::size_t> index_;
  std::vector<Node> nodes_;
};

}  // namespace amb

#include "baard/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace baard {

namespace {

double l2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return std::sqrt(s);
}

double norm2(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

// Pruning tolerance. Bounds computed through the triangle inequality can be
// off by a few ulps, so a node is skipped only when it is clearly worse.
double slack(double worst) { return 1e-10 * (1.0 + std::abs(worst)); }

}  // namespace

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::kL1:
      return "l1";
    case Metric::kL2:
      return "l2";
    case Metric::kCosine:
      return "cosine";
  }
  return "?";
}

Metric metric_from_string(std::string_view name) {
  if (name == "l1") return Metric::kL1;
  if (name == "l2") return Metric::kL2;
  if (name == "cosine") return Metric::kCosine;
  throw InvalidArgument("unknown metric '" + std::string(name) + "'");
}

double distance(Metric m, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("distance: dimension mismatch");
  switch (m) {
    case Metric::kL1: {
      double s = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) s += std::abs(a[j] - b[j]);
      return s;
    }
    case Metric::kL2:
      return l2(a, b);
    case Metric::kCosine: {
      const double na = norm2(a);
      const double nb = norm2(b);
      if (na == 0.0 || nb == 0.0) {
        throw InvalidArgument("cosine distance is undefined for a zero vector");
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) dot += a[j] * b[j];
      return std::max(0.0, 1.0 - dot / (na * nb));
    }
  }
  return 0.0;
}

BallTree::BallTree(Matrix points, std::vector<int> payload, Metric metric,
                   std::size_t leaf_size)
    : points_(std::move(points)),
      payload_(std::move(payload)),
      metric_(metric),
      leaf_size_(leaf_size) {
  if (points_.rows() == 0) throw InvalidArgument("ball tree needs at least one point");
  if (leaf_size_ == 0) throw InvalidArgument("leaf_size must be at least 1");
  if (payload_.empty()) {
    payload_.resize(points_.rows());
    std::iota(payload_.begin(), payload_.end(), 0);
  }
  if (payload_.size() != points_.rows()) {
    throw InvalidArgument("payload size does not match point count");
  }
  for (double v : points_.data()) {
    if (!std::isfinite(v)) throw InvalidArgument("ball tree points must be finite");
  }
  if (metric_ == Metric::kCosine) {
    unit_points_ = points_;
    for (std::size_t i = 0; i < unit_points_.rows(); ++i) {
      auto row = unit_points_.row(i);
      const double n = norm2(row);
      if (n == 0.0) throw InvalidArgument("zero vector under the cosine metric");
      for (double& v : row) v /= n;
    }
  }
  order_.resize(points_.rows());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  nodes_.reserve(2 * points_.rows() / leaf_size_ + 1);
  build_node(0, order_.size());
}

std::span<const double> BallTree::geometric_point(std::size_t i) const {
  return metric_ == Metric::kCosine ? unit_points_.row(i) : points_.row(i);
}

double BallTree::geometric_distance(std::span<const double> a,
                                    std::span<const double> b) const {
  return metric_ == Metric::kL1 ? distance(Metric::kL1, a, b) : l2(a, b);
}

int BallTree::build_node(std::size_t begin, std::size_t end) {
  const std::size_t d = points_.cols();
  Node node;
  node.begin = begin;
  node.end = end;
  node.center.assign(d, 0.0);
  for (std::size_t i = begin; i < end; ++i) {
    const auto p = geometric_point(order_[i]);
    for (std::size_t j = 0; j < d; ++j) node.center[j] += p[j];
  }
  for (double& v : node.center) v /= static_cast<double>(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    node.radius =
        std::max(node.radius, geometric_distance(node.center, geometric_point(order_[i])));
  }

  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(node));
  if (end - begin <= leaf_size_) return id;

  std::size_t split_dim = 0;
  double best_spread = -1.0;
  for (std::size_t j = 0; j < d; ++j) {
    double lo = geometric_point(order_[begin])[j];
    double hi = lo;
    for (std::size_t i = begin + 1; i < end; ++i) {
      const double v = geometric_point(order_[i])[j];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      split_dim = j;
    }
  }
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) {
                     const double va = geometric_point(a)[split_dim];
                     const double vb = geometric_point(b)[split_dim];
                     return va < vb || (va == vb && a < b);
                   });
  const int left = build_node(begin, mid);
  const int right = build_node(mid, end);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

double BallTree::lower_bound(const Node& node, std::span<const double> gx) const {
  const double gap = std::max(0.0, geometric_distance(node.center, gx) - node.radius);
  // For unit vectors, 1 - cos(u, v) = |u - v|^2 / 2.
  return metric_ == Metric::kCosine ? 0.5 * gap * gap : gap;
}

void BallTree::search(int node_id, std::span<const double> x, std::span<const double> gx,
                      std::size_t k, std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (heap.size() == k) {
    const double worst = heap.front().distance;
    if (lower_bound(node, gx) > worst + slack(worst)) return;
  }
  if (node.is_leaf()) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t p = order_[i];
      const Neighbor cand{payload_[p], distance(metric_, x, points_.row(p))};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), neighbor_less);
      } else if (neighbor_less(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), neighbor_less);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), neighbor_less);
      }
    }
    return;
  }
  const Node& l = nodes_[static_cast<std::size_t>(node.left)];
  const Node& r = nodes_[static_cast<std::size_t>(node.right)];
  if (geometric_distance(l.center, gx) <= geometric_distance(r.center, gx)) {
    search(node.left, x, gx, k, heap);
    search(node.right, x, gx, k, heap);
  } else {
    search(node.right, x, gx, k, heap);
    search(node.left, x, gx, k, heap);
  }
}

std::vector<Neighbor> BallTree::query(std::span<const double> x, std::size_t k) const {
  if (k == 0 || k > size()) {
    throw InvalidArgument("k = " + std::to_string(k) + " outside [1, " +
                          std::to_string(size()) + "]");
  }
  if (x.size() != points_.cols()) throw InvalidArgument("query dimension mismatch");
  for (double v : x) {
    if (!std::isfinite(v)) throw InvalidArgument("query point must be finite");
  }
  std::vector<double> unit;
  std::span<const double> gx = x;
  if (metric_ == Metric::kCosine) {
    const double n = norm2(x);
    if (n == 0.0) throw InvalidArgument("zero query vector under the cosine metric");
    unit.assign(x.begin(), x.end());
    for (double& v : unit) v /= n;
    gx = unit;
  }
  std::vector<Neighbor> heap;
  heap.reserve(k);
  search(0, x, gx, k, heap);
  std::sort_heap(heap.begin(), heap.end(), neighbor_less);
  return heap;
}

std::unique_ptr<NeighborIndex> make_ball_tree(const Matrix& points, std::vector<int> payload,
                                              Metric metric) {
  return std::make_unique<BallTree>(points, std::move(payload), metric);
}

}  // namespace baard

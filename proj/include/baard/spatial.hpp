#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "baard/matrix.hpp"

namespace baard {

enum class Metric { kL1, kL2, kCosine };

std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view name);

// Cosine distance is 1 - cos(a, b); both vectors must be nonzero.
double distance(Metric m, std::span<const double> a, std::span<const double> b);

struct Neighbor {
  int payload = 0;
  double distance = 0.0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Ascending by distance, then by payload. Every k-NN result in the library is
// ordered this way.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.payload < b.payload);
}

// Exact k-nearest-neighbour search over a fixed point set.
class NeighborIndex {
 public:
  virtual ~NeighborIndex() = default;
  virtual std::size_t size() const = 0;
  virtual Metric metric() const = 0;
  // Exactly k results in neighbor_less order. Throws when k is 0 or > size().
  virtual std::vector<Neighbor> query(std::span<const double> x, std::size_t k) const = 0;
  // Coordinates of the point stored under the given position (0..size-1).
  virtual std::span<const double> point(std::size_t i) const = 0;
  virtual int payload(std::size_t i) const = 0;
};

using IndexFactory = std::unique_ptr<NeighborIndex> (*)(const Matrix& points,
                                                       std::vector<int> payload,
                                                       Metric metric);

class BallTree final : public NeighborIndex {
 public:
  static constexpr std::size_t kDefaultLeafSize = 32;

  // Empty payload means payload[i] = i.
  BallTree(Matrix points, std::vector<int> payload, Metric metric,
           std::size_t leaf_size = kDefaultLeafSize);

  std::size_t size() const override { return points_.rows(); }
  Metric metric() const override { return metric_; }
  std::vector<Neighbor> query(std::span<const double> x, std::size_t k) const override;
  std::span<const double> point(std::size_t i) const override { return points_.row(i); }
  int payload(std::size_t i) const override { return payload_[i]; }

  std::size_t leaf_size() const { return leaf_size_; }

  struct Node {
    std::vector<double> center;
    double radius = 0.0;
    // Range into order_ covered by this node.
    std::size_t begin = 0;
    std::size_t end = 0;
    // Child node ids; -1 for leaves.
    int left = -1;
    int right = -1;
    bool is_leaf() const { return left < 0; }
  };

  const std::vector<Node>& nodes() const { return nodes_; }
  // Point ids in tree order; node [begin, end) ranges index into this.
  const std::vector<std::size_t>& order() const { return order_; }

  // Distance used for ball geometry. For L1/L2 it is the metric itself; for
  // cosine it is the Euclidean distance between unit-normalized vectors.
  double geometric_distance(std::span<const double> a, std::span<const double> b) const;
  std::span<const double> geometric_point(std::size_t i) const;

 private:
  int build_node(std::size_t begin, std::size_t end);
  void search(int node, std::span<const double> x, std::span<const double> gx,
              std::size_t k, std::vector<Neighbor>& heap) const;
  double lower_bound(const Node& node, std::span<const double> gx) const;

  Matrix points_;
  Matrix unit_points_;  // only populated for the cosine metric
  std::vector<int> payload_;
  Metric metric_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

std::unique_ptr<NeighborIndex> make_ball_tree(const Matrix& points, std::vector<int> payload,
                                              Metric metric);

}  // namespace baard

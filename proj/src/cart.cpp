#include <algorithm>
#include <numeric>

#include "baard/classifiers.hpp"
#include "baard/random.hpp"

namespace baard {

namespace {

double gini(std::span<const double> counts, double total) {
  if (total <= 0.0) return 0.0;
  double s = 1.0;
  for (double c : counts) s -= (c / total) * (c / total);
  return s;
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double impurity = 0.0;  // weighted child impurity
};

class CartBuilder {
 public:
  CartBuilder(const Dataset& train, const CartOptions& options)
      : train_(train), options_(options), features_(train.feature_dim()) {
    std::iota(features_.begin(), features_.end(), std::size_t{0});
    Rng rng(options.seed);
    rng.shuffle(std::span<std::size_t>(features_));
  }

  std::vector<CartNode> build() {
    std::vector<std::size_t> all(train_.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    grow(all, 0, -1);
    return std::move(nodes_);
  }

 private:
  std::vector<double> counts_of(std::span<const std::size_t> idx) const {
    std::vector<double> counts(static_cast<std::size_t>(train_.class_count), 0.0);
    for (std::size_t i : idx) counts[static_cast<std::size_t>(train_.labels[i])] += 1.0;
    return counts;
  }

  SplitChoice best_split(std::span<const std::size_t> idx, double parent_impurity) const {
    const auto n = static_cast<double>(idx.size());
    const auto classes = static_cast<std::size_t>(train_.class_count);
    SplitChoice best;
    best.impurity = parent_impurity;
    std::vector<std::size_t> sorted(idx.begin(), idx.end());
    const auto total = counts_of(idx);
    for (std::size_t f : features_) {
      std::ranges::sort(sorted, [&](std::size_t a, std::size_t b) {
        const double va = train_.samples(a, f);
        const double vb = train_.samples(b, f);
        return va < vb || (va == vb && a < b);
      });
      std::vector<double> left(classes, 0.0);
      std::vector<double> right = total;
      for (std::size_t pos = 0; pos + 1 < sorted.size(); ++pos) {
        const auto y = static_cast<std::size_t>(train_.labels[sorted[pos]]);
        left[y] += 1.0;
        right[y] -= 1.0;
        const double a = train_.samples(sorted[pos], f);
        const double b = train_.samples(sorted[pos + 1], f);
        if (a == b) continue;
        const std::size_t n_left = pos + 1;
        if (n_left < options_.min_leaf || sorted.size() - n_left < options_.min_leaf) continue;
        const auto nl = static_cast<double>(n_left);
        const double nr = n - nl;
        const double impurity = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
        if (impurity < best.impurity - 1e-12) {
          double t = a + (b - a) / 2.0;
          if (!(t < b)) t = a;
          best = {static_cast<int>(f), t, impurity};
        }
      }
    }
    return best;
  }

  int grow(std::span<const std::size_t> idx, std::size_t depth, int parent) {
    CartNode node;
    node.parent = parent;
    node.class_counts = counts_of(idx);
    const int id = static_cast<int>(nodes_.size());
    const double impurity = gini(node.class_counts, static_cast<double>(idx.size()));
    nodes_.push_back(node);
    if (depth >= options_.max_depth || impurity <= 0.0 || idx.size() < 2 * options_.min_leaf) {
      return id;
    }
    const SplitChoice split = best_split(idx, impurity);
    if (split.feature < 0) return id;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (std::size_t i : idx) {
      (train_.samples(i, static_cast<std::size_t>(split.feature)) <= split.threshold ? left
                                                                                      : right)
          .push_back(i);
    }
    nodes_[static_cast<std::size_t>(id)].feature = split.feature;
    nodes_[static_cast<std::size_t>(id)].threshold = split.threshold;
    const int l = grow(left, depth + 1, id);
    const int r = grow(right, depth + 1, id);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  const Dataset& train_;
  CartOptions options_;
  std::vector<std::size_t> features_;
  std::vector<CartNode> nodes_;
};

}  // namespace

CartTree::CartTree(std::size_t input_dim, int class_count, std::vector<CartNode> nodes)
    : input_dim_(input_dim), class_count_(class_count), nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw InvalidArgument("a tree needs at least one node");
  const auto n = static_cast<int>(nodes_.size());
  for (const auto& node : nodes_) {
    if (node.class_counts.size() != static_cast<std::size_t>(class_count_)) {
      throw InvalidArgument("tree node class counts do not match the class count");
    }
    if (!node.is_leaf()) {
      if (node.feature >= static_cast<int>(input_dim_) || node.left <= 0 || node.right <= 0 ||
          node.left >= n || node.right >= n) {
        throw InvalidArgument("tree node has an invalid feature or child reference");
      }
    }
  }
}

int CartTree::leaf_of(std::span<const double> x) const {
  if (x.size() != input_dim_) throw InvalidArgument("tree input dimension mismatch");
  int id = 0;
  while (!nodes_[static_cast<std::size_t>(id)].is_leaf()) {
    const auto& node = nodes_[static_cast<std::size_t>(id)];
    id = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
  }
  return id;
}

std::vector<double> CartTree::predict_proba(std::span<const double> x) const {
  const auto& counts = nodes_[static_cast<std::size_t>(leaf_of(x))].class_counts;
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  std::vector<double> p(counts.size(), 1.0 / static_cast<double>(counts.size()));
  if (total > 0.0) {
    for (std::size_t c = 0; c < p.size(); ++c) p[c] = counts[c] / total;
  }
  return p;
}

int CartTree::leaf_class(int node) const {
  return argmax(nodes_[static_cast<std::size_t>(node)].class_counts);
}

std::vector<PathStep> CartTree::decision_path(std::span<const double> x) const {
  if (x.size() != input_dim_) throw InvalidArgument("tree input dimension mismatch");
  std::vector<PathStep> path;
  int id = 0;
  while (!nodes_[static_cast<std::size_t>(id)].is_leaf()) {
    const auto& node = nodes_[static_cast<std::size_t>(id)];
    const bool left = x[static_cast<std::size_t>(node.feature)] <= node.threshold;
    path.push_back({id, node.feature, node.threshold, left});
    id = left ? node.left : node.right;
  }
  return path;
}

std::size_t CartTree::depth() const {
  std::vector<std::size_t> depth(nodes_.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t i = 1; i < nodes_.size(); ++i) {
    depth[i] = depth[static_cast<std::size_t>(nodes_[i].parent)] + 1;
    deepest = std::max(deepest, depth[i]);
  }
  return deepest;
}

CartTree cart_fit(const Dataset& train, const CartOptions& options) {
  if (options.max_depth < 1) throw InvalidArgument("max_depth must be at least 1");
  if (options.min_leaf < 1) throw InvalidArgument("min_leaf must be at least 1");
  if (train.size() == 0) throw InvalidArgument("cannot fit a tree on an empty dataset");
  CartBuilder builder(train, options);
  return CartTree(train.feature_dim(), train.class_count, builder.build());
}

}  // namespace baard

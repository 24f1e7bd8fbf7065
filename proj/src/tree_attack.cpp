#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "baard/attacks.hpp"

namespace baard {

namespace {

struct Interval {
  double lo = -std::numeric_limits<double>::infinity();  // exclusive
  double hi = std::numeric_limits<double>::infinity();   // inclusive
};

// Value inside (lo, hi] nearest to v, keeping at most `margin` clear of a
// threshold it has to cross.
double move_into(double v, const Interval& iv, double margin) {
  if (v > iv.lo && v <= iv.hi) return v;
  const double room = std::isfinite(iv.lo) && std::isfinite(iv.hi) ? (iv.hi - iv.lo) / 2.0
                                                                    : margin;
  const double step = std::min(margin, room);
  return v > iv.hi ? iv.hi - step : iv.lo + step;
}

void collect_leaves(const CartTree& tree, int node, std::vector<int>& out) {
  const auto& n = tree.nodes()[static_cast<std::size_t>(node)];
  if (n.is_leaf()) {
    out.push_back(node);
    return;
  }
  collect_leaves(tree, n.left, out);
  collect_leaves(tree, n.right, out);
}

// Feature intervals that route an input from the root to `leaf`.
std::map<int, Interval> leaf_constraints(const CartTree& tree, int leaf) {
  std::map<int, Interval> box;
  int child = leaf;
  int parent = tree.nodes()[static_cast<std::size_t>(leaf)].parent;
  while (parent >= 0) {
    const auto& p = tree.nodes()[static_cast<std::size_t>(parent)];
    auto& iv = box[p.feature];
    if (p.left == child) {
      iv.hi = std::min(iv.hi, p.threshold);
    } else {
      iv.lo = std::max(iv.lo, p.threshold);
    }
    child = parent;
    parent = p.parent;
  }
  return box;
}

}  // namespace

AttackResult decision_tree_attack(const CartTree& tree, std::span<const double> x, int y,
                                  const AttackBudget& budget) {
  if (x.size() != tree.input_dim()) throw InvalidArgument("tree attack: dimension mismatch");
  const int original = tree.predict(x);
  const auto path = tree.decision_path(x);
  AttackResult result;
  result.norm = Norm::kLinf;
  result.x_adv.assign(x.begin(), x.end());

  std::size_t visited = 0;
  for (auto step = path.rbegin(); step != path.rend(); ++step) {
    ++visited;
    const auto& node = tree.nodes()[static_cast<std::size_t>(step->node)];
    std::vector<int> leaves;
    collect_leaves(tree, step->went_left ? node.right : node.left, leaves);

    std::optional<std::vector<double>> best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int leaf : leaves) {
      if (tree.leaf_class(leaf) == original) continue;
      std::vector<double> cand(x.begin(), x.end());
      for (const auto& [feature, iv] : leaf_constraints(tree, leaf)) {
        auto& v = cand[static_cast<std::size_t>(feature)];
        v = move_into(v, iv, budget.margin);
      }
      clip_to_feasible(cand, x);
      if (tree.predict(cand) == original) continue;
      double cost = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) cost = std::max(cost, std::abs(cand[j] - x[j]));
      if (cost < best_cost) {
        best_cost = cost;
        best = std::move(cand);
      }
    }
    if (best) {
      result.x_adv = std::move(*best);
      break;
    }
  }

  result.iterations_used = visited;
  result.success = tree.predict(result.x_adv) != y;
  double linf = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) linf = std::max(linf, std::abs(result.x_adv[j] - x[j]));
  result.perturbation_norm = linf;
  return result;
}

}  // namespace baard

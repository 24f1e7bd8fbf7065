#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "baard/classifiers.hpp"

namespace baard {

enum class Norm { kLinf, kL2 };

std::string_view to_string(Norm n);
Norm norm_from_string(std::string_view name);
double vector_norm(Norm n, std::span<const double> v);

struct AttackBudget {
  double epsilon = 0.3;  // normalized-feature units
  Norm norm = Norm::kLinf;
  std::size_t max_iter = 100;
  // PGD step; unset means 2.5 * epsilon / max_iter.
  std::optional<double> step_size;
  std::uint64_t seed = 0;
  double overshoot = 0.02;  // DeepFool
  double margin = 1e-4;     // decision tree attack
  // Budgeted attacks stop at the first successful iterate unless set.
  bool full_iterations = false;
};

struct AttackResult {
  std::vector<double> x_adv;
  bool success = false;  // prediction on x_adv differs from the true label
  double perturbation_norm = 0.0;
  Norm norm = Norm::kLinf;  // norm perturbation_norm is measured in
  std::size_t iterations_used = 0;
  // Boundary attack only: distance to x of every accepted iterate, in order.
  std::vector<double> trace;
};

// Attack outputs are clipped per coordinate to [min(0, x_j), max(1, x_j)]: the
// unit box whenever x lies in it, and never further from x than the budget.
void clip_to_feasible(std::span<double> v, std::span<const double> x);

// x' = x + eps * sign(grad_x loss(x, y)).
AttackResult fgsm(const DifferentiableClassifier& model, std::span<const double> x, int y,
                  const AttackBudget& budget);

// Fixed-step projected gradient ascent (L-inf: signed steps and coordinate
// clamp; L2: normalized steps and radial projection).
AttackResult pgd(const DifferentiableClassifier& model, std::span<const double> x, int y,
                 const AttackBudget& budget);

// Minimal step to the nearest linearized boundary, repeated until the label
// flips. Uses budget.max_iter and budget.overshoot; epsilon is ignored.
AttackResult deepfool(const DifferentiableClassifier& model, std::span<const double> x, int y,
                      const AttackBudget& budget);

struct BoundaryOptions {
  double spherical_step = 0.01;
  double source_step = 0.01;
  double step_adapt_up = 1.2;
  double step_adapt_down = 0.8;
  std::size_t streak = 5;  // consecutive outcomes before the steps adapt
  std::size_t binary_search_steps = 25;
};

// Decision-based random walk along the boundary towards x. Only predict() is
// called. start must already be misclassified.
AttackResult boundary_attack(const Classifier& model, std::span<const double> x, int y,
                             std::span<const double> start, const AttackBudget& budget,
                             const BoundaryOptions& options = {});

// Nearest pool sample (L2, lowest index on ties) that the model does not
// assign to y. Falls back to seeded uniform draws in the unit box. Throws when
// nothing misclassified is found.
std::vector<double> find_adversarial_start(const Classifier& model, const Matrix& pool,
                                           std::span<const double> x, int y,
                                           std::uint64_t seed);

// Walks x's decision path from the deepest split upwards; at the first node
// whose other subtree holds a leaf of a different class, moves x into the
// cheapest such leaf (L-inf change), placing each constrained feature at the
// threshold +- margin.
AttackResult decision_tree_attack(const CartTree& tree, std::span<const double> x, int y,
                                  const AttackBudget& budget);

}  // namespace baard

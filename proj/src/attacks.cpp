#include "baard/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace baard {

std::string_view to_string(Norm n) { return n == Norm::kLinf ? "linf" : "l2"; }

Norm norm_from_string(std::string_view name) {
  if (name == "linf") return Norm::kLinf;
  if (name == "l2") return Norm::kL2;
  throw InvalidArgument("unknown norm '" + std::string(name) + "'");
}

double vector_norm(Norm n, std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc = n == Norm::kLinf ? std::max(acc, std::abs(x)) : acc + x * x;
  return n == Norm::kLinf ? acc : std::sqrt(acc);
}

void clip_to_feasible(std::span<double> v, std::span<const double> x) {
  for (std::size_t j = 0; j < v.size(); ++j) {
    v[j] = std::clamp(v[j], std::min(0.0, x[j]), std::max(1.0, x[j]));
  }
}

namespace {

void check_input(const Classifier& model, std::span<const double> x, int y) {
  if (x.size() != model.input_dim()) throw InvalidArgument("attack input dimension mismatch");
  if (y < 0 || y >= model.class_count()) throw InvalidArgument("attack label out of range");
  for (double v : x) {
    if (!std::isfinite(v)) throw InvalidArgument("attack input must be finite");
  }
}

void check_budget(const AttackBudget& b) {
  if (!(b.epsilon >= 0.0)) throw InvalidArgument("epsilon must be non-negative");
  if (b.max_iter < 1) throw InvalidArgument("max_iter must be at least 1");
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

AttackResult finish(const Classifier& model, std::span<const double> x, int y,
                    std::vector<double> x_adv, Norm norm, std::size_t iterations) {
  std::vector<double> delta(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) delta[j] = x_adv[j] - x[j];
  AttackResult r;
  r.success = model.predict(x_adv) != y;
  r.perturbation_norm = vector_norm(norm, delta);
  r.norm = norm;
  r.iterations_used = iterations;
  r.x_adv = std::move(x_adv);
  return r;
}

// Projects v onto the norm ball of radius eps around x, then onto the box.
void project(std::span<double> v, std::span<const double> x, const AttackBudget& b) {
  if (b.norm == Norm::kLinf) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = std::clamp(v[j], x[j] - b.epsilon, x[j] + b.epsilon);
    }
  } else {
    double n2 = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) n2 += (v[j] - x[j]) * (v[j] - x[j]);
    const double n = std::sqrt(n2);
    if (n > b.epsilon) {
      const double scale = b.epsilon / n;
      for (std::size_t j = 0; j < v.size(); ++j) v[j] = x[j] + (v[j] - x[j]) * scale;
    }
  }
  clip_to_feasible(v, x);
}

}  // namespace

AttackResult fgsm(const DifferentiableClassifier& model, std::span<const double> x, int y,
                  const AttackBudget& budget) {
  check_input(model, x, y);
  check_budget(budget);
  if (budget.norm != Norm::kLinf) throw InvalidArgument("FGSM is an L-inf attack");
  const auto grad = model.input_gradient(x, y);
  std::vector<double> adv(x.begin(), x.end());
  for (std::size_t j = 0; j < adv.size(); ++j) adv[j] = x[j] + budget.epsilon * sign(grad[j]);
  clip_to_feasible(adv, x);
  return finish(model, x, y, std::move(adv), Norm::kLinf, 1);
}

AttackResult pgd(const DifferentiableClassifier& model, std::span<const double> x, int y,
                 const AttackBudget& budget) {
  check_input(model, x, y);
  check_budget(budget);
  const double step = budget.step_size.value_or(2.5 * budget.epsilon /
                                                static_cast<double>(budget.max_iter));
  std::vector<double> adv(x.begin(), x.end());
  std::size_t it = 0;
  while (it < budget.max_iter) {
    const auto grad = model.input_gradient(adv, y);
    ++it;
    if (budget.norm == Norm::kLinf) {
      for (std::size_t j = 0; j < adv.size(); ++j) adv[j] += step * sign(grad[j]);
    } else {
      const double g = vector_norm(Norm::kL2, grad);
      if (g == 0.0) break;
      for (std::size_t j = 0; j < adv.size(); ++j) adv[j] += step * grad[j] / g;
    }
    project(adv, x, budget);
    if (!budget.full_iterations && model.predict(adv) != y) break;
  }
  return finish(model, x, y, std::move(adv), budget.norm, it);
}

AttackResult deepfool(const DifferentiableClassifier& model, std::span<const double> x, int y,
                      const AttackBudget& budget) {
  check_input(model, x, y);
  if (budget.max_iter < 1) throw InvalidArgument("max_iter must be at least 1");
  const std::size_t d = x.size();
  const auto classes = static_cast<std::size_t>(model.class_count());
  const auto yi = static_cast<std::size_t>(y);
  std::vector<double> adv(x.begin(), x.end());
  std::vector<double> total(d, 0.0);
  std::size_t it = 0;
  while (it < budget.max_iter && model.predict(adv) == y) {
    const auto z = model.logits(adv);
    const Matrix jac = model.logit_jacobian(adv);
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> step;
    for (std::size_t k = 0; k < classes; ++k) {
      if (k == yi) continue;
      std::vector<double> w(d);
      for (std::size_t j = 0; j < d; ++j) w[j] = jac(k, j) - jac(yi, j);
      const double f = z[k] - z[yi];
      const double wn = vector_norm(Norm::kL2, w);
      if (wn == 0.0) continue;
      const double dist = std::abs(f) / wn;
      if (dist < best) {
        best = dist;
        step = w;
        for (double& v : step) v *= std::abs(f) / (wn * wn);
      }
    }
    if (step.empty()) break;  // flat logits: no direction to follow
    ++it;
    for (std::size_t j = 0; j < d; ++j) {
      total[j] += step[j];
      adv[j] = x[j] + (1.0 + budget.overshoot) * total[j];
    }
    clip_to_feasible(adv, x);
  }
  return finish(model, x, y, std::move(adv), Norm::kL2, it);
}

}  // namespace baard

#include <algorithm>
#include <cmath>
#include <limits>

#include "baard/attacks.hpp"
#include "baard/random.hpp"

namespace baard {

namespace {

double l2_between(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(s);
}

}  // namespace

std::vector<double> find_adversarial_start(const Classifier& model, const Matrix& pool,
                                           std::span<const double> x, int y,
                                           std::uint64_t seed) {
  std::optional<std::size_t> best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pool.rows(); ++i) {
    if (model.predict(pool.row(i)) == y) continue;
    const double d = l2_between(pool.row(i), x);
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  if (best) {
    const auto r = pool.row(*best);
    return {r.begin(), r.end()};
  }
  Rng rng(seed);
  std::vector<double> v(x.size());
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (double& c : v) c = rng.uniform();
    if (model.predict(v) != y) return v;
  }
  throw Error("no adversarial starting point found for class " + std::to_string(y));
}

AttackResult boundary_attack(const Classifier& model, std::span<const double> x, int y,
                             std::span<const double> start, const AttackBudget& budget,
                             const BoundaryOptions& options) {
  if (x.size() != model.input_dim() || start.size() != x.size()) {
    throw InvalidArgument("boundary attack: dimension mismatch");
  }
  if (budget.max_iter < 1) throw InvalidArgument("max_iter must be at least 1");
  const std::size_t d = x.size();
  AttackResult result;
  result.norm = Norm::kL2;

  if (model.predict(x) != y) {
    result.x_adv.assign(x.begin(), x.end());
    result.success = true;
    result.trace = {0.0};
    return result;
  }
  if (model.predict(start) == y) {
    throw InvalidArgument("boundary attack start point is not adversarial");
  }

  // Move the start point along the segment towards x while it stays adversarial.
  std::vector<double> adv(start.begin(), start.end());
  {
    double lo = 0.0;  // fraction of the way from start to x known adversarial
    double hi = 1.0;
    std::vector<double> probe(d);
    for (std::size_t s = 0; s < options.binary_search_steps; ++s) {
      const double mid = 0.5 * (lo + hi);
      for (std::size_t j = 0; j < d; ++j) probe[j] = (1.0 - mid) * start[j] + mid * x[j];
      (model.predict(probe) != y ? lo : hi) = mid;
    }
    if (lo > 0.0) {
      for (std::size_t j = 0; j < d; ++j) adv[j] = (1.0 - lo) * start[j] + lo * x[j];
    }
  }

  Rng rng(budget.seed);
  double dist = l2_between(adv, x);
  result.trace.push_back(dist);
  double spherical = options.spherical_step;
  double source = options.source_step;
  std::size_t accepts = 0;
  std::size_t rejects = 0;
  std::vector<double> cand(d);
  std::vector<double> eta(d);
  std::size_t it = 0;

  for (; it < budget.max_iter && dist > 0.0; ++it) {
    // Orthogonal step: random direction with the radial component removed,
    // then renormalized back onto the sphere of radius dist around x.
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      eta[j] = rng.normal();
      dot += eta[j] * (adv[j] - x[j]);
    }
    for (std::size_t j = 0; j < d; ++j) eta[j] -= dot / (dist * dist) * (adv[j] - x[j]);
    const double eta_norm = l2_between(eta, std::vector<double>(d, 0.0));
    if (eta_norm == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) cand[j] = adv[j] + eta[j] * spherical * dist / eta_norm;
    const double cand_dist = l2_between(cand, x);
    for (std::size_t j = 0; j < d; ++j) {
      cand[j] = x[j] + (cand[j] - x[j]) * (dist / cand_dist);
      // Source step towards the original input.
      cand[j] += source * (x[j] - cand[j]);
    }
    clip_to_feasible(cand, x);
    const double new_dist = l2_between(cand, x);

    if (new_dist < dist && model.predict(cand) != y) {
      adv = cand;
      dist = new_dist;
      result.trace.push_back(dist);
      rejects = 0;
      if (++accepts >= options.streak) {
        spherical *= options.step_adapt_up;
        source *= options.step_adapt_up;
        accepts = 0;
      }
    } else {
      accepts = 0;
      if (++rejects >= options.streak) {
        spherical = std::max(spherical * options.step_adapt_down, 1e-6);
        source = std::max(source * options.step_adapt_down, 1e-8);
        rejects = 0;
      }
    }
  }

  result.x_adv = std::move(adv);
  result.success = model.predict(result.x_adv) != y;
  result.perturbation_norm = dist;
  result.iterations_used = it;
  return result;
}

}  // namespace baard

#include <algorithm>
#include <cmath>
#include <numeric>

#include "baard/classifiers.hpp"
#include "baard/random.hpp"

namespace baard {

int Classifier::predict(std::span<const double> x) const { return argmax(predict_proba(x)); }

int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

double log_sum_exp(std::span<const double> z) {
  const double top = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - top);
  return top + std::log(sum);
}

void check_class(int y, std::size_t classes) {
  if (y < 0 || static_cast<std::size_t>(y) >= classes) {
    throw InvalidArgument("class id " + std::to_string(y) + " out of range");
  }
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw InvalidArgument("an MLP needs at least input and output sizes");
  for (std::size_t s : layer_sizes) {
    if (s == 0) throw InvalidArgument("MLP layer sizes must be positive");
  }
  if (layer_sizes.back() < 2) throw InvalidArgument("MLP output must have at least 2 classes");
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    MlpLayer layer;
    layer.in = layer_sizes[l];
    layer.out = layer_sizes[l + 1];
    layer.weights.resize(layer.in * layer.out);
    layer.bias.assign(layer.out, 0.0);
    const double scale = std::sqrt(2.0 / static_cast<double>(layer.in));
    for (double& w : layer.weights) w = scale * rng.normal();
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(std::vector<MlpLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("an MLP needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weights.size() != layer.in * layer.out || layer.bias.size() != layer.out) {
      throw InvalidArgument("MLP layer " + std::to_string(l) + " has inconsistent shapes");
    }
    if (l > 0 && layers_[l - 1].out != layer.in) {
      throw InvalidArgument("MLP layer " + std::to_string(l) + " input size mismatch");
    }
    for (double w : layer.weights) {
      if (!std::isfinite(w)) throw InvalidArgument("MLP parameters must be finite");
    }
  }
}

std::vector<std::size_t> Mlp::layer_sizes() const {
  std::vector<std::size_t> sizes{layers_.front().in};
  for (const auto& layer : layers_) sizes.push_back(layer.out);
  return sizes;
}

Mlp::Activations Mlp::forward(std::span<const double> x) const {
  if (x.size() != input_dim()) throw InvalidArgument("MLP input dimension mismatch");
  Activations acts;
  acts.post.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const auto& in = acts.post.back();
    std::vector<double> z(layer.bias);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = layer.weights.data() + o * layer.in;
      double s = 0.0;
      for (std::size_t i = 0; i < layer.in; ++i) s += w[i] * in[i];
      z[o] += s;
    }
    std::vector<double> a = z;
    if (l + 1 < layers_.size()) {
      for (double& v : a) v = std::max(0.0, v);
    }
    acts.pre.push_back(std::move(z));
    acts.post.push_back(std::move(a));
  }
  return acts;
}

std::vector<double> Mlp::backward(const Activations& acts, std::vector<double> delta,
                                  std::vector<MlpLayer>* grads) const {
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const auto& in = acts.post[l];
    if (grads) {
      auto& g = (*grads)[l];
      for (std::size_t o = 0; o < layer.out; ++o) {
        g.bias[o] += delta[o];
        double* gw = g.weights.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) gw[i] += delta[o] * in[i];
      }
    }
    std::vector<double> below(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = layer.weights.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) below[i] += w[i] * delta[o];
    }
    if (l > 0) {
      const auto& pre = acts.pre[l - 1];
      for (std::size_t i = 0; i < below.size(); ++i) {
        if (pre[i] <= 0.0) below[i] = 0.0;
      }
    }
    delta = std::move(below);
  }
  return delta;
}

std::vector<double> Mlp::logits(std::span<const double> x) const {
  return forward(x).post.back();
}

std::vector<double> Mlp::predict_proba(std::span<const double> x) const {
  return softmax(logits(x));
}

double Mlp::loss(std::span<const double> x, int y) const {
  check_class(y, layers_.back().out);
  const auto z = logits(x);
  return log_sum_exp(z) - z[static_cast<std::size_t>(y)];
}

std::vector<double> Mlp::input_gradient(std::span<const double> x, int y) const {
  check_class(y, layers_.back().out);
  const auto acts = forward(x);
  auto delta = softmax(acts.post.back());
  delta[static_cast<std::size_t>(y)] -= 1.0;
  return backward(acts, std::move(delta), nullptr);
}

Matrix Mlp::logit_jacobian(std::span<const double> x) const {
  const auto acts = forward(x);
  const std::size_t classes = layers_.back().out;
  Matrix jac(classes, input_dim());
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> delta(classes, 0.0);
    delta[c] = 1.0;
    const auto g = backward(acts, std::move(delta), nullptr);
    std::copy(g.begin(), g.end(), jac.row(c).begin());
  }
  return jac;
}

void Mlp::fit(const Dataset& train, const MlpTrainOptions& options) {
  if (train.feature_dim() != input_dim()) {
    throw InvalidArgument("training data has " + std::to_string(train.feature_dim()) +
                          " features but the MLP expects " + std::to_string(input_dim()));
  }
  if (train.class_count != class_count()) {
    throw InvalidArgument("training data class count does not match the MLP output size");
  }
  if (!(options.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (options.batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (train.size() == 0) throw InvalidArgument("cannot train on an empty dataset");

  loss_history_.clear();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<MlpLayer> grads = layers_;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    Rng rng(stream_seed(options.seed, epoch + 1));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      for (auto& g : grads) {
        std::ranges::fill(g.weights, 0.0);
        std::ranges::fill(g.bias, 0.0);
      }
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        const auto acts = forward(train.samples.row(i));
        auto delta = softmax(acts.post.back());
        delta[static_cast<std::size_t>(train.labels[i])] -= 1.0;
        backward(acts, std::move(delta), &grads);
      }
      const double step = options.learning_rate / static_cast<double>(stop - start);
      for (std::size_t l = 0; l < layers_.size(); ++l) {
        for (std::size_t p = 0; p < layers_[l].weights.size(); ++p) {
          layers_[l].weights[p] -= step * grads[l].weights[p];
        }
        for (std::size_t p = 0; p < layers_[l].bias.size(); ++p) {
          layers_[l].bias[p] -= step * grads[l].bias[p];
        }
      }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) total += loss(train.samples.row(i), train.labels[i]);
    const double mean = total / static_cast<double>(train.size());
    if (!std::isfinite(mean)) {
      throw Error("MLP training diverged at epoch " + std::to_string(epoch + 1) +
                  " (loss is not finite)");
    }
    loss_history_.push_back(mean);
  }
}

Mlp mlp_fit(const Dataset& train, const std::vector<std::size_t>& layer_sizes,
            const MlpTrainOptions& options) {
  if (layer_sizes.size() < 2 || layer_sizes.front() != train.feature_dim() ||
      layer_sizes.back() != static_cast<std::size_t>(train.class_count)) {
    throw InvalidArgument("layer sizes must start at the feature dimension and end at the class count");
  }
  Mlp model(layer_sizes, options.seed);
  model.fit(train, options);
  return model;
}

}  // namespace baard

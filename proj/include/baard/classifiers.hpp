#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "baard/data.hpp"
#include "baard/spatial.hpp"

namespace baard {

// Black-box prediction surface shared by every model. Fitted models are
// immutable; all const members are safe to call concurrently.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual int class_count() const = 0;

  // Valid distribution over class_count() classes.
  virtual std::vector<double> predict_proba(std::span<const double> x) const = 0;
  // argmax of predict_proba, lowest class id on ties.
  virtual int predict(std::span<const double> x) const;

  virtual bool supports_gradient() const { return false; }
};

// A model whose outputs are differentiable in the input.
class DifferentiableClassifier : public Classifier {
 public:
  bool supports_gradient() const override { return true; }

  virtual std::vector<double> logits(std::span<const double> x) const = 0;
  // Cross-entropy of the softmax output against class y.
  virtual double loss(std::span<const double> x, int y) const = 0;
  // d loss / d x.
  virtual std::vector<double> input_gradient(std::span<const double> x, int y) const = 0;
  // Row c holds d logit_c / d x.
  virtual Matrix logit_jacobian(std::span<const double> x) const = 0;
};

int argmax(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);

// ---------------------------------------------------------------------------
// Multilayer perceptron: ReLU hidden layers, softmax output, cross-entropy.

struct MlpLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out
};

struct MlpTrainOptions {
  std::size_t epochs = 200;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

class Mlp final : public DifferentiableClassifier {
 public:
  // layer_sizes = {d, hidden..., C}. Weights get seeded He-normal init.
  Mlp(std::vector<std::size_t> layer_sizes, std::uint64_t seed);
  explicit Mlp(std::vector<MlpLayer> layers);

  std::string kind() const override { return "mlp"; }
  std::size_t input_dim() const override { return layers_.front().in; }
  int class_count() const override { return static_cast<int>(layers_.back().out); }

  std::vector<double> predict_proba(std::span<const double> x) const override;
  std::vector<double> logits(std::span<const double> x) const override;
  double loss(std::span<const double> x, int y) const override;
  std::vector<double> input_gradient(std::span<const double> x, int y) const override;
  Matrix logit_jacobian(std::span<const double> x) const override;

  const std::vector<MlpLayer>& layers() const { return layers_; }
  std::vector<std::size_t> layer_sizes() const;

  // Mean training cross-entropy after each epoch of the last fit call.
  const std::vector<double>& loss_history() const { return loss_history_; }

  // Mini-batch gradient descent with a fixed learning rate. Throws when the
  // loss becomes non-finite, naming the epoch.
  void fit(const Dataset& train, const MlpTrainOptions& options);

 private:
  struct Activations {
    std::vector<std::vector<double>> pre;   // per layer, before activation
    std::vector<std::vector<double>> post;  // per layer, after activation; post[0] = x
  };
  Activations forward(std::span<const double> x) const;
  // Backpropagates d loss / d logits down to the input. When grads is non-null
  // the parameter gradients are accumulated into it.
  std::vector<double> backward(const Activations& acts, std::vector<double> delta,
                               std::vector<MlpLayer>* grads) const;

  std::vector<MlpLayer> layers_;
  std::vector<double> loss_history_;
};

Mlp mlp_fit(const Dataset& train, const std::vector<std::size_t>& layer_sizes,
            const MlpTrainOptions& options);

// ---------------------------------------------------------------------------
// CART decision tree with Gini impurity. Go left iff x[feature] <= threshold.

struct CartNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int parent = -1;
  std::vector<double> class_counts;  // training samples reaching the node
  bool is_leaf() const { return feature < 0; }
};

struct PathStep {
  int node = 0;
  int feature = 0;
  double threshold = 0.0;
  bool went_left = false;
  friend bool operator==(const PathStep&, const PathStep&) = default;
};

struct CartOptions {
  std::size_t max_depth = 8;
  std::size_t min_leaf = 1;
  std::uint64_t seed = 0;
};

class CartTree final : public Classifier {
 public:
  CartTree(std::size_t input_dim, int class_count, std::vector<CartNode> nodes);

  std::string kind() const override { return "cart"; }
  std::size_t input_dim() const override { return input_dim_; }
  int class_count() const override { return class_count_; }
  std::vector<double> predict_proba(std::span<const double> x) const override;

  // Root-to-leaf decisions taken by x; empty for a single-leaf tree.
  std::vector<PathStep> decision_path(std::span<const double> x) const;
  int leaf_of(std::span<const double> x) const;
  int leaf_class(int node) const;

  const std::vector<CartNode>& nodes() const { return nodes_; }
  std::size_t depth() const;

 private:
  std::size_t input_dim_;
  int class_count_;
  std::vector<CartNode> nodes_;
};

CartTree cart_fit(const Dataset& train, const CartOptions& options);

// ---------------------------------------------------------------------------
// k-nearest-neighbour vote.

class KnnClassifier final : public Classifier {
 public:
  KnnClassifier(Dataset train, std::size_t k, Metric metric);

  std::string kind() const override { return "knn"; }
  std::size_t input_dim() const override { return train_.feature_dim(); }
  int class_count() const override { return train_.class_count; }
  std::vector<double> predict_proba(std::span<const double> x) const override;

  const Dataset& train() const { return train_; }
  std::size_t k() const { return k_; }
  Metric metric() const { return metric_; }

 private:
  Dataset train_;
  std::size_t k_;
  Metric metric_;
  std::unique_ptr<BallTree> tree_;
};

// Neighbour-label frequencies among the k nearest training points.
std::vector<double> knn_predict(const Dataset& train, std::span<const double> x, std::size_t k,
                                Metric metric);

// ---------------------------------------------------------------------------
// Serialization. Documents carry "format": "baard.<kind>/1".

nlohmann::json classifier_to_json(const Classifier& model);
std::unique_ptr<Classifier> classifier_from_json(const nlohmann::json& doc);

}  // namespace baard

#include "baard/classifiers.hpp"

namespace baard {

namespace {

std::vector<double> vote(const std::vector<Neighbor>& neighbors, const std::vector<int>& labels,
                         int class_count) {
  std::vector<double> p(static_cast<std::size_t>(class_count), 0.0);
  for (const auto& nb : neighbors) p[static_cast<std::size_t>(labels[static_cast<std::size_t>(nb.payload)])] += 1.0;
  for (double& v : p) v /= static_cast<double>(neighbors.size());
  return p;
}

}  // namespace

KnnClassifier::KnnClassifier(Dataset train, std::size_t k, Metric metric)
    : train_(std::move(train)), k_(k), metric_(metric) {
  if (k_ == 0 || k_ > train_.size()) {
    throw InvalidArgument("k = " + std::to_string(k_) + " outside [1, " +
                          std::to_string(train_.size()) + "]");
  }
  tree_ = std::make_unique<BallTree>(train_.samples, std::vector<int>{}, metric_);
}

std::vector<double> KnnClassifier::predict_proba(std::span<const double> x) const {
  return vote(tree_->query(x, k_), train_.labels, train_.class_count);
}

std::vector<double> knn_predict(const Dataset& train, std::span<const double> x, std::size_t k,
                                Metric metric) {
  if (k == 0 || k > train.size()) {
    throw InvalidArgument("k = " + std::to_string(k) + " outside [1, " +
                          std::to_string(train.size()) + "]");
  }
  const BallTree tree(train.samples, {}, metric);
  return vote(tree.query(x, k), train.labels, train.class_count);
}

}  // namespace baard

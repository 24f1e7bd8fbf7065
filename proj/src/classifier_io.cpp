#include "baard/classifiers.hpp"

namespace baard {

using nlohmann::json;

namespace {

json dataset_to_json(const Dataset& ds) {
  json rows = json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = ds.samples.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"samples", rows}, {"labels", ds.labels}, {"class_count", ds.class_count}};
}

Dataset dataset_from_json(const json& doc) {
  Dataset ds;
  const auto rows = doc.at("samples").get<std::vector<std::vector<double>>>();
  ds.samples = Matrix(0, rows.empty() ? 0 : rows.front().size());
  for (const auto& r : rows) ds.samples.append_row(r);
  ds.labels = doc.at("labels").get<std::vector<int>>();
  ds.class_count = doc.at("class_count").get<int>();
  for (int c = 0; c < ds.class_count; ++c) ds.label_names.push_back(std::to_string(c));
  ds.validate();
  return ds;
}

json node_to_json(const std::vector<CartNode>& nodes, int id) {
  const auto& node = nodes[static_cast<std::size_t>(id)];
  json out = {{"counts", node.class_counts}};
  if (!node.is_leaf()) {
    out["feature"] = node.feature;
    out["threshold"] = node.threshold;
    out["left"] = node_to_json(nodes, node.left);
    out["right"] = node_to_json(nodes, node.right);
  }
  return out;
}

int node_from_json(const json& doc, int parent, std::vector<CartNode>& nodes) {
  CartNode node;
  node.parent = parent;
  node.class_counts = doc.at("counts").get<std::vector<double>>();
  const int id = static_cast<int>(nodes.size());
  nodes.push_back(node);
  if (doc.contains("feature")) {
    nodes.back().feature = doc.at("feature").get<int>();
    nodes.back().threshold = doc.at("threshold").get<double>();
    const int l = node_from_json(doc.at("left"), id, nodes);
    const int r = node_from_json(doc.at("right"), id, nodes);
    nodes[static_cast<std::size_t>(id)].left = l;
    nodes[static_cast<std::size_t>(id)].right = r;
  }
  return id;
}

}  // namespace

json classifier_to_json(const Classifier& model) {
  if (const auto* mlp = dynamic_cast<const Mlp*>(&model)) {
    json layers = json::array();
    for (const auto& layer : mlp->layers()) {
      layers.push_back({{"in", layer.in},
                        {"out", layer.out},
                        {"weights", layer.weights},
                        {"bias", layer.bias}});
    }
    return {{"format", "baard.mlp/1"}, {"layers", layers}};
  }
  if (const auto* tree = dynamic_cast<const CartTree*>(&model)) {
    return {{"format", "baard.cart/1"},
            {"input_dim", tree->input_dim()},
            {"class_count", tree->class_count()},
            {"root", node_to_json(tree->nodes(), 0)}};
  }
  if (const auto* knn = dynamic_cast<const KnnClassifier*>(&model)) {
    return {{"format", "baard.knn/1"},
            {"k", knn->k()},
            {"metric", std::string(to_string(knn->metric()))},
            {"train", dataset_to_json(knn->train())}};
  }
  throw InvalidArgument("cannot serialize classifier of kind '" + model.kind() + "'");
}

std::unique_ptr<Classifier> classifier_from_json(const json& doc) {
  const auto format = doc.at("format").get<std::string>();
  if (format == "baard.mlp/1") {
    std::vector<MlpLayer> layers;
    for (const auto& l : doc.at("layers")) {
      layers.push_back({l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(),
                        l.at("weights").get<std::vector<double>>(),
                        l.at("bias").get<std::vector<double>>()});
    }
    return std::make_unique<Mlp>(std::move(layers));
  }
  if (format == "baard.cart/1") {
    std::vector<CartNode> nodes;
    node_from_json(doc.at("root"), -1, nodes);
    return std::make_unique<CartTree>(doc.at("input_dim").get<std::size_t>(),
                                      doc.at("class_count").get<int>(), std::move(nodes));
  }
  if (format == "baard.knn/1") {
    return std::make_unique<KnnClassifier>(dataset_from_json(doc.at("train")),
                                           doc.at("k").get<std::size_t>(),
                                           metric_from_string(doc.at("metric").get<std::string>()));
  }
  throw InvalidArgument("unknown classifier format '" + format + "'");
}

}  // namespace baard

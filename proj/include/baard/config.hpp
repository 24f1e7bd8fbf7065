#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "baard/attacks.hpp"
#include "baard/data.hpp"
#include "baard/detector.hpp"
#include "baard/evaluation.hpp"

namespace baard {

enum class DatasetSource { kCsv, kXor, kBlobs };

struct DatasetSpec {
  DatasetSource source = DatasetSource::kXor;
  std::string name;  // defaults to the file stem or the generator name
  // csv
  std::filesystem::path path;
  LabelColumn label_column = std::string("label");
  bool has_header = true;
  // xor / blobs
  std::size_t n_per_class = 100;  // per quadrant for xor
  double noise_sd = 0.1;
  std::vector<std::vector<double>> centers;
  std::uint64_t seed = 0;
};

struct ClassifierSpec {
  std::string kind = "mlp";  // mlp | cart | knn
  std::vector<std::size_t> hidden = {32};
  std::size_t epochs = 200;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t max_depth = 8;
  std::size_t min_leaf = 1;
  std::size_t k = 5;
  Metric metric = Metric::kL2;
};

struct AttackSpec {
  AttackKind kind = AttackKind::kFgsm;
  Norm norm = Norm::kLinf;
  // Budgets for fgsm/pgd. Minimum-perturbation attacks run once with 0.
  std::vector<double> epsilons = {0.3};
  std::size_t max_iter = 100;
  std::optional<double> step_size;
  double overshoot = 0.02;
  double margin = 1e-4;
};

struct GridSpec {
  bool enabled = false;
  std::size_t resolution = 100;
  Bounds2D bounds;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  double train_fraction = 0.6;
  double validation_fraction = 0.2;
  bool normalize = true;
  ClassifierSpec classifier;
  std::vector<AttackSpec> attacks;
  DetectorOptions detector;
  std::vector<double> roc_q_grid;
  GridSpec grid;
  std::vector<std::uint64_t> seeds = {0};
  std::filesystem::path output_dir = "out";
};

// Strict parse: unknown keys, wrong types and out-of-range values raise
// ConfigError naming the key path (e.g. "detector.q2"). Relative dataset paths
// resolve against base_dir.
ExperimentConfig parse_config(const nlohmann::json& doc,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Every field, defaults included.
nlohmann::json config_to_json(const ExperimentConfig& config);

// Loads or generates the dataset described by the spec.
Dataset load_dataset(const DatasetSpec& spec);

}  // namespace baard

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "baard/classifiers.hpp"
#include "baard/config.hpp"

namespace baard {

// Split of the configured dataset for one seed, min-max normalized on the
// training part when the config asks for it.
Split prepare_split(const Dataset& full, const ExperimentConfig& config, std::uint64_t seed);

std::unique_ptr<Classifier> train_classifier(const ClassifierSpec& spec, const Dataset& train,
                                             std::uint64_t seed);

AttackBudget make_budget(const AttackSpec& spec, double epsilon, std::uint64_t seed);

struct ExperimentReport {
  nlohmann::json doc;  // carries "generated_at"; everything else is deterministic
  std::string csv;
  std::optional<RegionGrid> grid;
};

// Runs every seed and (attack, epsilon) cell, then aggregates mean and sample
// standard deviation per metric. Failures are rethrown as Error with the phase
// in the message.
ExperimentReport run_experiment(const ExperimentConfig& config, std::size_t workers = 1);

// Writes report.json, report.csv and, when present, the grid rasters.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

// CSV raster, one line per grid row from y_min upwards. stage 0..2 are stages
// 1..3, stage 3 is the chained detector.
std::string grid_csv(const RegionGrid& grid, int label, std::size_t stage);
std::string grid_predicted_csv(const RegionGrid& grid);

// dir itself when it does not exist or is empty, else the first free dir-N.
std::filesystem::path versioned_output_dir(const std::filesystem::path& dir);

// Number rendering shared by every CSV writer: shortest round-trip form,
// empty for NaN.
std::string format_number(double v);

}  // namespace baard

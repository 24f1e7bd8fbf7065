#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "baard/matrix.hpp"

namespace baard {

// Per-feature min-max parameters fitted on a training split.
struct FeatureRange {
  double min = 0.0;
  double max = 0.0;
  friend bool operator==(const FeatureRange&, const FeatureRange&) = default;
};

using Normalization = std::vector<FeatureRange>;

struct Dataset {
  Matrix samples;
  std::vector<int> labels;
  int class_count = 0;
  // label_names[c] is the original label text of class c.
  std::vector<std::string> label_names;
  std::optional<Normalization> norm;

  std::size_t size() const { return samples.rows(); }
  std::size_t feature_dim() const { return samples.cols(); }

  // Rows with the given indices; class metadata and norm carry over.
  Dataset subset(std::span<const std::size_t> indices) const;
  // Rows whose label equals c.
  Matrix class_samples(int c) const;
  std::vector<std::size_t> class_counts() const;

  // Throws InvalidArgument when labels or values break the dataset invariants.
  void validate() const;
};

using LabelColumn = std::variant<std::string, std::size_t>;

// Reads an RFC-4180 style CSV. Labels are densely re-encoded in order of first
// appearance; every other column must parse as a finite real.
Dataset load_csv(const std::filesystem::path& path, const LabelColumn& label_column,
                 bool has_header);

// Same as load_csv on in-memory text.
Dataset parse_csv(std::string_view text, const LabelColumn& label_column,
                  bool has_header);

// Splits one CSV record into fields, honouring double-quoted fields.
std::vector<std::string> split_csv_record(std::string_view line);

// Learns the per-feature range on ds. A constant feature maps to 0.
Normalization fit_minmax(const Dataset& ds);
// Applies stored ranges. Values outside the fitted range are not clipped.
Dataset apply_normalization(const Dataset& ds, const Normalization& norm);
// Inverse map; requires ds.norm.
Dataset denormalize(const Dataset& ds);
// fit_minmax + apply_normalization on the same data. Rejects an already
// normalized dataset.
Dataset minmax_normalize(const Dataset& ds);

void normalize_in_place(std::span<double> x, const Normalization& norm);

struct SplitSpec {
  double train_fraction = 0.6;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

struct Split {
  Dataset train;
  Dataset validation;
  Dataset test;
  SplitIndices indices;
};

// Per-class shuffle-and-cut. Each class needs at least 3 samples.
SplitIndices stratified_split_indices(const Dataset& ds, const SplitSpec& spec);
Split stratified_split(const Dataset& ds, const SplitSpec& spec);

// Four Gaussian clusters at (+-1, +-1); label 0 when the centre coordinates
// share a sign.
Dataset gen_xor(std::size_t n_per_quadrant, double noise_sd, std::uint64_t seed);

// Isotropic Gaussian clusters, one class per centre.
Dataset gen_blobs(std::size_t n_per_class, const std::vector<std::vector<double>>& centers,
                  double sd, std::uint64_t seed);

// FNV-1a over shape, sample bytes and labels. Used to tie a serialized detector
// to the training set it was fitted on.
std::uint64_t content_hash(const Dataset& ds);

}  // namespace baard

#include "baard/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "baard/random.hpp"

namespace baard {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::optional<double> parse_real(std::string_view field) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    return std::nullopt;
  }
  return value;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.samples = samples.select_rows(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels[i]);
  out.class_count = class_count;
  out.label_names = label_names;
  out.norm = norm;
  return out;
}

Matrix Dataset::class_samples(int c) const {
  Matrix out(0, feature_dim());
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] == c) out.append_row(samples.row(i));
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(class_count), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

void Dataset::validate() const {
  if (labels.size() != samples.rows()) {
    throw InvalidArgument("label count does not match sample count");
  }
  for (int y : labels) {
    if (y < 0 || y >= class_count) {
      throw InvalidArgument("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(class_count) + ")");
    }
  }
  for (double v : samples.data()) {
    if (!std::isfinite(v)) throw InvalidArgument("dataset contains NaN or Inf");
  }
  if (norm && norm->size() != feature_dim()) {
    throw InvalidArgument("normalization width does not match feature dimension");
  }
}

std::vector<std::string> split_csv_record(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

Dataset parse_csv(std::string_view text, const LabelColumn& label_column,
                  bool has_header) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> label_index;
  std::size_t width = 0;

  if (const auto* idx = std::get_if<std::size_t>(&label_column)) label_index = *idx;

  Dataset ds;
  std::map<std::string, int> codes;
  std::vector<double> row;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_record(line);
    if (width == 0) {
      width = fields.size();
      if (has_header) {
        if (const auto* name = std::get_if<std::string>(&label_column)) {
          for (std::size_t j = 0; j < fields.size(); ++j) {
            if (trim(fields[j]) == *name) label_index = j;
          }
          if (!label_index) {
            throw ParseError(line_no, 1, "label column '" + *name + "' not in header");
          }
        }
        if (*label_index >= width) {
          throw ParseError(line_no, width, "label column index out of range");
        }
        continue;
      }
      if (!label_index) {
        throw InvalidArgument("label column given by name but the file has no header");
      }
      if (*label_index >= width) {
        throw ParseError(line_no, width, "label column index out of range");
      }
    }
    if (fields.size() != width) {
      throw ParseError(line_no, fields.size(),
                       "expected " + std::to_string(width) + " fields, found " +
                           std::to_string(fields.size()));
    }
    row.clear();
    for (std::size_t j = 0; j < width; ++j) {
      if (j == *label_index) continue;
      const auto value = parse_real(fields[j]);
      if (!value) {
        throw ParseError(line_no, j + 1, "not a real number: '" + fields[j] + "'");
      }
      if (!std::isfinite(*value)) {
        throw ParseError(line_no, j + 1, "non-finite value: '" + fields[j] + "'");
      }
      row.push_back(*value);
    }
    const std::string label{trim(fields[*label_index])};
    if (label.empty()) throw ParseError(line_no, *label_index + 1, "empty label");
    auto [it, inserted] = codes.emplace(label, static_cast<int>(ds.label_names.size()));
    if (inserted) ds.label_names.push_back(label);
    ds.samples.append_row(row);
    ds.labels.push_back(it->second);
  }

  ds.class_count = static_cast<int>(ds.label_names.size());
  if (ds.class_count < 2) {
    throw InvalidArgument("dataset has " + std::to_string(ds.class_count) +
                          " class(es); at least 2 are required");
  }
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, const LabelColumn& label_column,
                 bool has_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open dataset file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), label_column, has_header);
}

Normalization fit_minmax(const Dataset& ds) {
  if (ds.size() == 0) throw InvalidArgument("cannot fit normalization on an empty dataset");
  Normalization norm(ds.feature_dim());
  for (std::size_t j = 0; j < ds.feature_dim(); ++j) {
    double lo = ds.samples(0, j);
    double hi = lo;
    for (std::size_t i = 1; i < ds.size(); ++i) {
      lo = std::min(lo, ds.samples(i, j));
      hi = std::max(hi, ds.samples(i, j));
    }
    norm[j] = {lo, hi};
  }
  return norm;
}

void normalize_in_place(std::span<double> x, const Normalization& norm) {
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double range = norm[j].max - norm[j].min;
    x[j] = range > 0.0 ? (x[j] - norm[j].min) / range : 0.0;
  }
}

Dataset apply_normalization(const Dataset& ds, const Normalization& norm) {
  if (ds.norm) throw InvalidArgument("dataset is already normalized");
  if (norm.size() != ds.feature_dim()) {
    throw InvalidArgument("normalization width does not match feature dimension");
  }
  Dataset out = ds;
  for (std::size_t i = 0; i < out.size(); ++i) normalize_in_place(out.samples.row(i), norm);
  out.norm = norm;
  return out;
}

Dataset denormalize(const Dataset& ds) {
  if (!ds.norm) throw InvalidArgument("dataset is not normalized");
  Dataset out = ds;
  const auto& norm = *ds.norm;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto x = out.samples.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) {
      x[j] = norm[j].min + x[j] * (norm[j].max - norm[j].min);
    }
  }
  out.norm.reset();
  return out;
}

Dataset minmax_normalize(const Dataset& ds) {
  if (ds.norm) throw InvalidArgument("dataset is already normalized");
  return apply_normalization(ds, fit_minmax(ds));
}

SplitIndices stratified_split_indices(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) ||
      !(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0) ||
      spec.train_fraction + spec.validation_fraction >= 1.0) {
    throw InvalidArgument("split fractions must lie in (0,1) and sum to less than 1");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.class_count));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  SplitIndices out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 3) {
      throw InvalidArgument("class " + std::to_string(c) + " has " +
                            std::to_string(idx.size()) +
                            " samples; stratified split needs at least 3");
    }
    Rng rng(stream_seed(spec.seed, c));
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n = static_cast<double>(idx.size());
    auto n_train = static_cast<std::size_t>(std::llround(n * spec.train_fraction));
    auto n_val = static_cast<std::size_t>(std::llround(n * spec.validation_fraction));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 2);
    n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - n_train - 1);
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + n_train);
    out.validation.insert(out.validation.end(), idx.begin() + n_train,
                          idx.begin() + n_train + n_val);
    out.test.insert(out.test.end(), idx.begin() + n_train + n_val, idx.end());
  }
  std::ranges::sort(out.train);
  std::ranges::sort(out.validation);
  std::ranges::sort(out.test);
  return out;
}

Split stratified_split(const Dataset& ds, const SplitSpec& spec) {
  auto indices = stratified_split_indices(ds, spec);
  Split split{ds.subset(indices.train), ds.subset(indices.validation),
              ds.subset(indices.test), {}};
  split.indices = std::move(indices);
  return split;
}

Dataset gen_xor(std::size_t n_per_quadrant, double noise_sd, std::uint64_t seed) {
  if (n_per_quadrant == 0) throw InvalidArgument("n_per_quadrant must be at least 1");
  if (noise_sd < 0.0) throw InvalidArgument("noise_sd must be non-negative");
  static constexpr double kCenters[4][2] = {{1, 1}, {-1, -1}, {-1, 1}, {1, -1}};
  Rng rng(seed);
  Dataset ds;
  ds.samples = Matrix(0, 2);
  for (std::size_t i = 0; i < n_per_quadrant; ++i) {
    for (const auto& c : kCenters) {
      const double p[2] = {c[0] + noise_sd * rng.normal(), c[1] + noise_sd * rng.normal()};
      ds.samples.append_row(p);
      ds.labels.push_back((c[0] > 0) == (c[1] > 0) ? 0 : 1);
    }
  }
  ds.class_count = 2;
  ds.label_names = {"0", "1"};
  return ds;
}

Dataset gen_blobs(std::size_t n_per_class, const std::vector<std::vector<double>>& centers,
                  double sd, std::uint64_t seed) {
  if (n_per_class == 0) throw InvalidArgument("n_per_class must be at least 1");
  if (centers.size() < 2) throw InvalidArgument("gen_blobs needs at least 2 centers");
  if (!(sd > 0.0)) throw InvalidArgument("sd must be positive");
  const std::size_t d = centers.front().size();
  for (const auto& c : centers) {
    if (c.size() != d || d == 0) throw InvalidArgument("centers must share a nonzero dimension");
  }
  Rng rng(seed);
  Dataset ds;
  ds.samples = Matrix(0, d);
  std::vector<double> p(d);
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t c = 0; c < centers.size(); ++c) {
      for (std::size_t j = 0; j < d; ++j) p[j] = centers[c][j] + sd * rng.normal();
      ds.samples.append_row(p);
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  ds.class_count = static_cast<int>(centers.size());
  for (std::size_t c = 0; c < centers.size(); ++c) ds.label_names.push_back(std::to_string(c));
  return ds;
}

std::uint64_t content_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(ds.size());
  mix(ds.feature_dim());
  for (double v : ds.samples.data()) mix(std::bit_cast<std::uint64_t>(v));
  for (int y : ds.labels) mix(static_cast<std::uint64_t>(y));
  return h;
}

}  // namespace baard

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "obsmult/error.hpp"
#include "obsmult/io.hpp"
#include "obsmult/random.hpp"

namespace obsmult {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Feature matrix (row i is x_i) with labels in {-1, +1}. Immutable once built;
/// the constructor enforces every invariant.
class Dataset {
 public:
  Dataset(Matrix features, Vector labels, std::vector<std::string> feature_names)
      : features_(std::move(features)),
        labels_(std::move(labels)),
        names_(std::move(feature_names)) {
    validate();
  }

  /// Names the columns x0, x1, ...
  Dataset(Matrix features, Vector labels)
      : features_(std::move(features)), labels_(std::move(labels)), names_(default_names(features_.cols())) {
    validate();
  }

  const Matrix& features() const noexcept { return features_; }
  const Vector& labels() const noexcept { return labels_; }
  const std::vector<std::string>& feature_names() const noexcept { return names_; }
  Index n() const noexcept { return features_.rows(); }
  Index d() const noexcept { return features_.cols(); }

  Dataset with_labels(Vector labels) const { return Dataset(features_, std::move(labels), names_); }

  /// Rows in the given order (repeats allowed).
  Dataset subset(std::span<const Index> rows) const {
    Matrix x(static_cast<Index>(rows.size()), d());
    Vector y(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      x.row(static_cast<Index>(r)) = features_.row(rows[r]);
      y(static_cast<Index>(r)) = labels_(rows[r]);
    }
    return Dataset(std::move(x), std::move(y), names_);
  }

  bool operator==(const Dataset& other) const {
    return names_ == other.names_ && features_.rows() == other.features_.rows() &&
           features_.cols() == other.features_.cols() && features_ == other.features_ &&
           labels_ == other.labels_;
  }

  static std::vector<std::string> default_names(Index d) {
    std::vector<std::string> names;
    for (Index j = 0; j < d; ++j) names.push_back("x" + std::to_string(j));
    return names;
  }

 private:
  void validate() const {
    if (features_.rows() == 0) throw Error(ErrorKind::EmptyDataset, "dataset has no rows");
    if (features_.cols() == 0) throw Error(ErrorKind::InvalidDataset, "dataset has no feature columns");
    if (labels_.size() != features_.rows()) {
      throw Error(ErrorKind::DimensionMismatch, "labels length " + std::to_string(labels_.size()) +
                                                    " != rows " + std::to_string(features_.rows()));
    }
    if (static_cast<Index>(names_.size()) != features_.cols()) {
      throw Error(ErrorKind::DimensionMismatch, "feature_names length != feature count");
    }
    if (!features_.allFinite()) throw Error(ErrorKind::InvalidDataset, "non-finite feature value");
    for (Index i = 0; i < labels_.size(); ++i) {
      if (labels_(i) != 1.0 && labels_(i) != -1.0) {
        throw Error(ErrorKind::InvalidLabelValue, "label at row " + std::to_string(i) + " is not -1/+1");
      }
    }
    std::set<std::string> seen;
    for (const auto& name : names_) {
      if (name.empty()) throw Error(ErrorKind::InvalidDataset, "empty feature name");
      if (!seen.insert(name).second) throw Error(ErrorKind::InvalidDataset, "duplicate feature name " + name);
    }
  }

  Matrix features_;
  Vector labels_;
  std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// CSV

/// A fully numeric CSV file: header plus a row-major matrix of values.
struct CsvTable {
  std::vector<std::string> header;
  Matrix values;

  Index column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return static_cast<Index>(j);
    }
    return -1;
  }
};

/// Reads a comma-separated numeric table with a header row. Cells that are not
/// finite numbers raise NonNumericCell with 1-based data row and column name.
inline CsvTable read_csv_table(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + start, end - start);
    if (!io::trim(line).empty()) lines.push_back(line);
    start = end + 1;
  }
  if (lines.empty()) throw Error(ErrorKind::EmptyDataset, path.string() + " has no header");

  CsvTable table;
  table.header = io::split_csv_line(lines[0]);
  const auto cols = static_cast<Index>(table.header.size());
  table.values.resize(static_cast<Index>(lines.size() - 1), cols);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = io::split_csv_line(lines[r]);
    if (static_cast<Index>(fields.size()) != cols) {
      throw Error(ErrorKind::InvalidDataset, "row " + std::to_string(r) + " has " +
                                                 std::to_string(fields.size()) + " fields, header has " +
                                                 std::to_string(cols));
    }
    for (Index c = 0; c < cols; ++c) {
      double v = 0.0;
      if (!io::parse_double(fields[static_cast<std::size_t>(c)], v) || !std::isfinite(v)) {
        throw Error(ErrorKind::NonNumericCell,
                    "row " + std::to_string(r) + ", column " + table.header[static_cast<std::size_t>(c)]);
      }
      table.values(static_cast<Index>(r - 1), c) = v;
    }
  }
  return table;
}

/// Maps a raw label cell to {-1, +1}: 0 -> -1, 1 -> +1, -1 and +1 unchanged.
inline double normalize_label(double raw, Index row) {
  if (raw == 1.0) return 1.0;
  if (raw == 0.0 || raw == -1.0) return -1.0;
  throw Error(ErrorKind::InvalidLabelValue,
              "row " + std::to_string(row + 1) + " has label " + io::format_double(raw));
}

inline Dataset dataset_from_table(const CsvTable& table, const std::string& label_column,
                                  const std::vector<std::string>& skip_columns = {}) {
  const Index label_col = table.column(label_column);
  if (label_col < 0) throw Error(ErrorKind::MissingLabelColumn, "no column named '" + label_column + "'");
  if (table.values.rows() == 0) throw Error(ErrorKind::EmptyDataset, "no data rows");

  std::vector<Index> feature_cols;
  std::vector<std::string> names;
  for (Index c = 0; c < static_cast<Index>(table.header.size()); ++c) {
    const auto& name = table.header[static_cast<std::size_t>(c)];
    if (c == label_col || std::find(skip_columns.begin(), skip_columns.end(), name) != skip_columns.end()) {
      continue;
    }
    feature_cols.push_back(c);
    names.push_back(name);
  }
  Matrix x(table.values.rows(), static_cast<Index>(feature_cols.size()));
  for (std::size_t j = 0; j < feature_cols.size(); ++j) {
    x.col(static_cast<Index>(j)) = table.values.col(feature_cols[j]);
  }
  Vector y(table.values.rows());
  for (Index i = 0; i < y.size(); ++i) y(i) = normalize_label(table.values(i, label_col), i);
  return Dataset(std::move(x), std::move(y), std::move(names));
}

inline Dataset load_csv(const std::filesystem::path& path, const std::string& label_column = "label") {
  return dataset_from_table(read_csv_table(path), label_column);
}

/// Extra numeric columns appended after the label (e.g. true probabilities).
struct ExtraColumn {
  std::string name;
  Vector values;
};

inline std::string dataset_to_csv(const Dataset& data, const std::string& label_column = "label",
                                  const std::vector<ExtraColumn>& extra = {}) {
  std::string out;
  for (const auto& name : data.feature_names()) out += name + ",";
  out += label_column;
  for (const auto& col : extra) out += "," + col.name;
  out += "\n";
  for (Index i = 0; i < data.n(); ++i) {
    for (Index j = 0; j < data.d(); ++j) out += io::format_double(data.features()(i, j)) + ",";
    out += data.labels()(i) > 0 ? "1" : "-1";
    for (const auto& col : extra) out += "," + io::format_double(col.values(i));
    out += "\n";
  }
  return out;
}

inline void write_csv(const Dataset& data, const std::filesystem::path& path,
                      const std::string& label_column = "label", const std::vector<ExtraColumn>& extra = {}) {
  io::write_file_atomic(path, dataset_to_csv(data, label_column, extra));
}

// ---------------------------------------------------------------------------
// Label draws

/// label[i] = +1 with probability probs[i]. Point i always consumes counter
/// (stream_index, i), so the outcome for a point does not depend on n or on
/// evaluation order.
inline Vector draw_labels(const Vector& probs, const LabelDrawSeed& seed) {
  const CounterRng rng(seed.master_seed);
  Vector labels(probs.size());
  for (Index i = 0; i < probs.size(); ++i) {
    const double p = probs(i);
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorKind::ProbOutOfRange, "probability at index " + std::to_string(i) + " is " +
                                                 io::format_double(p));
    }
    labels(i) = rng.uniform(RngDomain::LabelDraw, seed.stream_index, static_cast<std::uint64_t>(i)) < p ? 1.0 : -1.0;
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Standardization

/// Column affine map x -> (x - mean) / scale. Constant columns keep scale 1.
struct Standardization {
  Vector mean;
  Vector scale;

  Matrix apply(const Matrix& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
};

inline Standardization fit_standardization(const Matrix& x) {
  Standardization s;
  s.mean = x.colwise().mean().transpose();
  s.scale.resize(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - s.mean(j)).square().sum() / static_cast<double>(x.rows());
    s.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

}  // namespace obsmult

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tme/data.hpp"

namespace tme {

struct FeatureSpec {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
};

// Describes how to read a dataset: a CSV with a header row plus column
// roles. Image paths in the CSV are resolved relative to base_dir.
struct Manifest {
  std::string csv_path;
  std::string base_dir;
  std::string id_column;
  std::string image_column;
  std::string target_column;
  TaskKind task = TaskKind::classification;
  std::vector<FeatureSpec> features;

  void validate() const;
};

Manifest read_manifest(const std::string& manifest_json_path);

// Loads the CSV into a dataset. Empty cells and the literal "NaN"
// (case-insensitive) mark missing features. Image files must exist;
// pixels are decoded lazily. Categorical cells and classification
// targets are coded by sorted distinct value, so codes are stable
// across loads. Code-to-label tables are kept on the dataset.
struct LoadedDataset {
  MultimodalDataset ds;
  std::vector<std::vector<std::string>> category_values;  // per feature column (empty if numeric)
  std::vector<std::string> class_labels;                  // classification only
  std::string base_dir;
};

LoadedDataset load_manifest(const Manifest& m);

// Decodes a sample's image (from disk or the in-memory payload).
ImageArray load_image(const ImageRef& ref, const std::string& base_dir);

// RFC 4180 CSV reader (quoted fields, escaped quotes, CRLF tolerant).
std::vector<std::vector<std::string>> read_csv(const std::string& path);

struct Normalizer {
  struct NumericStats {
    double mean = 0.0;
    double std = 1.0;
    bool constant = false;
  };
  // Per feature column. Numeric columns use stats; categorical columns
  // use code_map (stored code -> train-local code, unknown -> map size)
  // plus stats over the local codes.
  std::vector<NumericStats> stats;
  std::vector<std::map<int, int>> code_map;
  std::vector<ColumnKind> kinds;

  long d() const { return static_cast<long>(kinds.size()); }
  int local_code(long col, double stored) const;
  int n_local_codes(long col) const {
    return static_cast<int>(code_map[static_cast<std::size_t>(col)].size()) + 1;
  }
};

// Fits per-feature statistics on the training rows, observed cells only.
// Standard deviation uses the N-1 denominator; constant columns are
// flagged and normalize to zero.
Normalizer fit_normalizer(const MultimodalDataset& ds, const std::vector<long>& train_indices);

// z-scored matrix for the requested rows (missing cells read 0; use the
// dataset masks alongside). Categorical cells are z-scored local codes.
Eigen::MatrixXd normalized_matrix(const MultimodalDataset& ds, const Normalizer& nz,
                                  const std::vector<long>& rows);

// Inputs for the feed-forward tabular baseline: z-scored numeric block
// plus per-categorical-column local codes for embedding lookup.
struct EncodedInputs {
  Eigen::MatrixXd numeric;                  // [rows x n_numeric]
  std::vector<std::vector<int>> cat_codes;  // one vector per categorical column
  std::vector<long> numeric_cols, cat_cols;
};

EncodedInputs encode_for_mlp(const MultimodalDataset& ds, const Normalizer& nz,
                             const std::vector<long>& rows);

struct MedianImputer {
  std::vector<double> fill;  // numeric median or categorical modal code
  std::vector<ColumnKind> kinds;
};

MedianImputer fit_imputer(const MultimodalDataset& ds, const std::vector<long>& train_indices);
MedianImputer fit_imputer(const MultimodalDataset& ds);

// Returns a copy with every missing cell replaced by the fitted statistic
// and an all-false mask. Observed cells are untouched.
MultimodalDataset apply_imputer(const MedianImputer& imp, const MultimodalDataset& ds);

}  // namespace tme

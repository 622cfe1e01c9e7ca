#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "tme/common.hpp"
#include "tme/image.hpp"

namespace tme {

enum class TaskKind { classification, regression };

struct TabularRow {
  Eigen::VectorXd values;
  std::vector<uint8_t> missing;  // 1 = value absent; mask is authoritative

  long d() const { return values.size(); }
};

struct Target {
  TaskKind kind = TaskKind::classification;
  int class_index = -1;
  double real_value = std::numeric_limits<double>::quiet_NaN();

  static Target cls(int c) { return Target{TaskKind::classification, c, 0.0}; }
  static Target reg(double v) { return Target{TaskKind::regression, -1, v}; }
};

struct MultimodalSample {
  ImageRef image;
  TabularRow tabular;
  Target target;
  std::string id;
};

enum class ColumnKind { numeric, categorical };

struct Schema {
  std::vector<std::string> names;
  std::vector<ColumnKind> kinds;

  long d() const { return static_cast<long>(names.size()); }
};

struct MultimodalDataset {
  std::vector<MultimodalSample> samples;
  Schema schema;
  TaskKind task = TaskKind::classification;
  int n_classes = 0;

  long n() const { return static_cast<long>(samples.size()); }
  long d() const { return schema.d(); }
};

struct SplitIndices {
  std::vector<long> train, val, test;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Size-bound and integrity checks. Violations are findings, not errors;
// oversized datasets still run (the in-context encoder subsamples its
// context) but the report flags them.
ValidationReport validate_dataset(const MultimodalDataset& ds);

constexpr long kMaxRows = 10000;
constexpr long kMaxFeatures = 500;
constexpr int kMaxClasses = 10;

// Held-out counts use the ceiling rule: |test| = ceil(0.2*N) and
// |val| = ceil(0.2*(N - |test|)). When a predefined test partition is
// supplied only the validation set is carved from the remainder.
// Classification splits are stratified by class unless disabled.
SplitIndices split_dataset(const MultimodalDataset& ds, uint64_t seed,
                           const std::optional<SplitIndices>& predefined = std::nullopt,
                           bool stratified = true);

}  // namespace tme

#pragma once

// Experiment configuration: a versioned JSON file parsed strictly (unknown
// keys are errors) into normalized grids over encoders, fusions, modes, and
// missing policies.

#include <optional>
#include <string>
#include <vector>

#include "tme/bench.hpp"
#include "tme/encoders.hpp"
#include "tme/experiments.hpp"
#include "tme/fusion.hpp"
#include "tme/model.hpp"
#include "tme/train.hpp"

namespace tme::cfg {

enum class MissingPolicy { native, median_impute };

std::string to_string(MissingPolicy p);
MissingPolicy policy_from_string(const std::string& s);

struct SyntheticRef {
  bench::SyntheticSpec spec;
  long mnar_column = -1;  // -1 disables injection
  double mnar_fraction = 0.0;
};

// Either a manifest on disk or a built-in synthetic dataset.
struct DatasetRef {
  std::string name;
  std::string manifest;
  std::optional<SyntheticRef> synthetic;
};

struct ImageOptions {
  enc::BackboneId backbone = enc::BackboneId::tiny_cnn;
  long d_i = 64;
  std::string weights;
};

struct MaskOptions {
  std::vector<double> ratios;  // empty = no masking
  exp::MaskScope scope = exp::MaskScope::all_splits;
  uint64_t seed = 0;
};

struct ExperimentConfig {
  std::string out = "runs";
  std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<DatasetRef> datasets;
  std::vector<model::TabularBranch> tabular{model::TabularBranch::pfn};
  ImageOptions image;
  std::vector<fusion::Strategy> fusions{fusion::Strategy::cat};
  std::vector<enc::EncoderMode> modes{enc::EncoderMode::frozen};
  std::vector<MissingPolicy> policies{MissingPolicy::native};
  std::vector<model::Branches> baselines;  // unimodal reference models
  MaskOptions mask;
  train::TrainConfig train;
  std::string pfn_weights;
  long k = 192;
  bool strict_probe = false;

  std::string text;  // verbatim file contents; artifacts embed its hash
  uint64_t hash() const { return Fnv::of_string(text); }
};

// Strict parse + semantic validation. Throws EngineError with a
// field-level message on any violation.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

}  // namespace tme::cfg

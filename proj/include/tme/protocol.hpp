#pragma once

// Experiment driver: plans run grids from a config, executes single runs
// end to end (split, mask, impute, embed with caching, train, evaluate),
// and aggregates per-seed scores into result cells.

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tme/cache.hpp"
#include "tme/config.hpp"
#include "tme/ingest.hpp"
#include "tme/pfn.hpp"
#include "tme/train.hpp"

namespace tme::proto {

// One scheduled run, fully identified. Equal specs reproduce equal scores.
struct RunSpec {
  std::string dataset;
  model::Branches branches = model::Branches::both;
  model::TabularBranch tabular = model::TabularBranch::pfn;
  fusion::Strategy strategy = fusion::Strategy::cat;
  enc::EncoderMode mode = enc::EncoderMode::frozen;
  cfg::MissingPolicy policy = cfg::MissingPolicy::native;
  double mask_ratio = 0.0;
  uint64_t seed = 0;

  bool uses_tabular() const { return branches != model::Branches::image_only; }
  bool uses_image() const { return branches != model::Branches::tabular_only; }
  // "time-cat" for fused models, otherwise the ablation name.
  std::string model_label() const;
  // Encoder qualifier for grouped reports: "pfn", "mlp", or "-".
  std::string encoder_label() const;
  // Filesystem-safe unique id, seed included.
  std::string run_id() const;
  // Grouping key without the seed.
  std::string cell_id() const;
};

struct RunResult {
  RunSpec spec;
  std::string metric_name;
  double value = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  std::string checkpoint_dir;
  std::string error;  // empty = success
  train::RunRecord record;

  bool ok() const { return error.empty(); }
};

// Per-seed scores aggregated for one grid cell.
struct ResultCell {
  std::string dataset;
  std::string encoder;  // "pfn" | "mlp" | "-"
  std::string model;
  enc::EncoderMode mode = enc::EncoderMode::frozen;
  cfg::MissingPolicy policy = cfg::MissingPolicy::native;
  double mask_ratio = 0.0;
  std::string metric_name;
  std::vector<double> scores;       // successful runs, plan order
  std::vector<uint64_t> seeds;      // seeds behind the scores
  std::vector<std::string> errors;  // failed runs
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();

  bool complete() const { return errors.empty() && !scores.empty(); }
};

// Grid builders. Train demands scalar axes (one model); benchmark crosses
// encoders x fusions x modes x policies plus configured unimodal baselines;
// sweep crosses mask ratios (a 0.0 reference is always included) with
// baselines pinned at ratio 0.
std::vector<RunSpec> plan_train(const cfg::ExperimentConfig& cfg);
std::vector<RunSpec> plan_benchmark(const cfg::ExperimentConfig& cfg);
std::vector<RunSpec> plan_sweep(const cfg::ExperimentConfig& cfg);

struct DatasetBundle {
  MultimodalDataset ds;
  std::string base_dir;  // image path root; empty for in-memory datasets
};

// Materializes a configured dataset (manifest load or synthetic build).
DatasetBundle resolve_dataset(const cfg::ExperimentConfig& cfg, const std::string& name);

// Labeled conditioning set over the given rows in normalized feature space.
pfn::ContextSet build_context(const MultimodalDataset& ds, const Normalizer& nz,
                              const std::vector<long>& rows);

struct RunContext {
  cfg::ExperimentConfig config;
  std::string out_dir;
  std::string cache_dir;
  bool persist = true;  // write checkpoints, records, and results
  std::shared_ptr<const pfn::PFNWeights> pfn_weights;
};

// Resolves output/cache directories and loads the in-context encoder
// weights when any planned run needs them.
RunContext make_context(const cfg::ExperimentConfig& cfg, const std::vector<RunSpec>& plan,
                        const std::string& out_override = "");

// Executes one run end to end; throws on failure.
RunResult execute_run(const RunContext& ctx, const DatasetBundle& bundle, const RunSpec& spec);

// Runs the data-preparation path only (split, mask, impute, embed), filling
// the embedding cache without training anything.
void warm_embeddings(const RunContext& ctx, const DatasetBundle& bundle, const RunSpec& spec);

// Re-evaluates a persisted checkpoint on the test split without training.
RunResult evaluate_checkpoint(const RunContext& ctx, const DatasetBundle& bundle,
                              const RunSpec& spec);

// Serial driver: loads each dataset once, executes in plan order, captures
// per-run failures as error results instead of aborting the grid. The
// callback, if any, sees each result as it lands.
std::vector<RunResult> run_protocol(const RunContext& ctx, const std::vector<RunSpec>& plan,
                                    const std::function<void(const RunResult&)>& on_result = {});

// Groups results into cells (plan order preserved); mean/std appear once a
// cell has at least two successful seeds.
std::vector<ResultCell> collect_cells(const std::vector<RunResult>& results);

// Append-only results file: one compact JSON record per run.
std::string result_line(const RunContext& ctx, const RunResult& r);
void append_results(const RunContext& ctx, const std::vector<RunResult>& results);

// Per-run artifact IO used by the parallel worker path.
std::string run_dir(const RunContext& ctx, const RunSpec& spec);
void write_run_artifacts(const RunContext& ctx, const RunResult& r);
RunResult read_run_result(const std::string& path, const RunSpec& spec);

}  // namespace tme::proto

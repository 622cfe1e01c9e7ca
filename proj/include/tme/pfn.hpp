#pragma once

// Desk-scale in-context tabular model. Trained once on synthetic tasks,
// then used frozen: conditioned on a labeled context set it predicts
// query labels (single forward pass) and exposes the final hidden state
// at each query token as a 192-dim embedding.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tme/data.hpp"
#include "tme/nn.hpp"

namespace tme::pfn {

struct PriorConfig {
  long n_min = 50, n_max = 512;
  long d_min = 3, d_max = 20;
  int c_min = 2, c_max = 10;
  double miss_min = 0.0, miss_max = 0.4;
  // fraction of sampled tasks that are regression; the rest classification
  double regression_fraction = 0.25;
  // generator function depth range (0 = purely linear task)
  int depth_min = 0, depth_max = 2;
  long hidden_min = 4, hidden_max = 16;

  void validate() const;
};

struct PFNConfig {
  long d_max = 20;
  int c_max = 10;
  long width = 192;
  long layers = 3;
  long heads = 4;
  long ffn = 384;

  void validate() const;
  uint64_t arch_hash() const;
};

struct SyntheticTask {
  TaskKind kind = TaskKind::classification;
  Eigen::MatrixXd x;              // [n, d]
  std::vector<uint8_t> missing;   // n*d, row-major
  std::vector<int> labels;        // classification
  Eigen::VectorXd y;              // regression targets (raw scale)
  long n_ctx = 0;                 // rows [0, n_ctx) are context
  int n_classes = 0;

  long n() const { return x.rows(); }
  long d() const { return x.cols(); }
};

// Deterministic in (cfg, seed): a random shallow nonlinear function over
// Gaussian inputs; classification labels by quantile-bucketing its output
// into C classes with randomized bucket sizes; MCAR missingness at a rate
// drawn from the configured range. Every class appears in the context.
SyntheticTask generate_synthetic_task(const PriorConfig& cfg, uint64_t seed);

struct PFNWeights {
  PFNConfig cfg;

  nn::Parameter w_val;         // [d_max, width] per-feature value embedding
  nn::Parameter w_flag;        // [d_max, width] per-feature presence embedding
  nn::Parameter label_table;   // [c_max, width] context class-label embedding
  nn::Parameter w_ylabel;      // [1, width]     context scalar-label embedding
  nn::Parameter query_marker;  // [1, width]

  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Linear wq, wk, wv, wo;
    nn::Linear ff1, ff2;
  };
  std::vector<Block> blocks;
  nn::LayerNorm ln_final;
  nn::Linear head_cls;  // [c_max, width]
  nn::Linear head_reg;  // [1, width]

  // training provenance, carried by the checkpoint
  uint64_t trained_seed = 0;
  long trained_steps = 0;
  double train_wall_seconds = 0.0;

  explicit PFNWeights(PFNConfig c = {});
  void init(Rng& rng);
  nn::ParamList params();
  nn::ParamList params() const;
  uint64_t content_hash() const;
};

// Labeled conditioning set in standardized feature space.
struct ContextSet {
  TaskKind kind = TaskKind::classification;
  Eigen::MatrixXd x;             // [n_ctx, d]
  std::vector<uint8_t> missing;  // n_ctx*d
  std::vector<int> labels;
  int n_classes = 0;
  Eigen::VectorXd y;  // regression, raw scale
  double y_mean = 0.0, y_std = 1.0;
};

ContextSet context_from_task(const SyntheticTask& task);

// Contexts above this row count are stratified-subsampled with a warning.
constexpr long kMaxContextRows = 10000;
ContextSet subsample_context(const ContextSet& ctx, long cap, uint64_t seed);

// Class distributions for query rows, one probability vector of length
// n_classes per row. Single forward pass; no parameter updates.
Eigen::MatrixXd pfn_predict(const PFNWeights& w, const ContextSet& ctx,
                            const Eigen::MatrixXd& queries,
                            const std::vector<uint8_t>& missing);

// Regression means on the raw target scale.
Eigen::VectorXd pfn_predict_reg(const PFNWeights& w, const ContextSet& ctx,
                                const Eigen::MatrixXd& queries,
                                const std::vector<uint8_t>& missing);

// Final-layer hidden state at each query token, [rows, width]. Rows may
// come from any split; queries never see each other, so results are
// independent of batching.
Eigen::MatrixXd pfn_embed(const PFNWeights& w, const ContextSet& ctx,
                          const Eigen::MatrixXd& rows,
                          const std::vector<uint8_t>& missing);

struct TrainPfnOptions {
  double lr = 3e-4;
  long warmup_steps = 100;
  double clip_norm = 1.0;
  // progress reporting only; never influences the numbers
  std::function<void(long step, double loss)> on_step;
};

// Samples a fresh synthetic task per step and minimizes query-label
// cross-entropy (or squared error for regression tasks). Deterministic
// for a fixed seed. Non-finite loss aborts with the step index.
PFNWeights train_pfn(const PriorConfig& prior, const PFNConfig& arch, long steps, uint64_t seed,
                     std::vector<double>* loss_history = nullptr, TrainPfnOptions opts = {});

// Checkpoint: versioned binary, refuses to load a mismatched architecture.
void save_pfn(const std::string& path, const PFNWeights& w);
PFNWeights load_pfn(const std::string& path);

}  // namespace tme::pfn

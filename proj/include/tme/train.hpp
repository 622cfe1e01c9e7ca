#pragma once

// Optimization loop: schedule, early stopping, best-epoch restore.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tme/model.hpp"

namespace tme::train {

struct TrainConfig {
  long epochs = 100;
  double lr0 = 1e-3;
  double decay = 0.9;
  long decay_every = 20;
  long batch = 64;
  long patience = 10;
  double weight_decay = 0.01;
  uint64_t seed = 0;

  void validate() const;
};

// lr0 * decay^floor(e / decay_every) for 0-based epoch e in [0, epochs).
double lr_at_epoch(const TrainConfig& cfg, long e);

struct RunRecord {
  std::vector<double> train_loss;  // one entry per epoch actually run
  std::vector<double> val_metric;
  std::vector<double> lr;
  long best_epoch = 0;  // 1-based
  double best_val = 0.0;
  long epochs_run = 0;
  double wall_seconds = 0.0;
  std::string metric_name;
  std::string checkpoint_dir;  // filled by callers that persist the run
  // declared defaults echoed for auditability
  long patience = 0;
  double weight_decay = 0.0;

  std::string to_json() const;
};

// The skeleton the model trainer and the unit stubs share. run_epoch gets
// the 1-based epoch number and that epoch's learning rate and returns the
// mean train loss; eval_val scores the validation split.
struct LoopHooks {
  std::function<double(long epoch, double lr)> run_epoch;
  std::function<double()> eval_val;
  std::function<void()> snapshot_best;
  std::function<void()> restore_best;
  bool higher_is_better = true;
  std::string metric_name = "metric";
};

RunRecord run_train_loop(const TrainConfig& cfg, const LoopHooks& hooks);

// Inputs for one split, already embedded/encoded as the model requires.
struct PreparedSplit {
  std::optional<Eigen::MatrixXd> tab_embed;
  std::optional<EncodedInputs> tab_rows;
  std::optional<Eigen::MatrixXd> img_embed;
  std::vector<ImageArray> images;  // pre-resized when the image branch trains
  std::vector<int> labels;
  Eigen::VectorXd targets;
  long n = 0;
};

// Gathers the listed rows into a batch view over `split`.
struct BatchBuffers {
  Eigen::MatrixXd tab_embed, img_embed;
  EncodedInputs tab_rows;
  std::vector<const ImageArray*> images;
  std::vector<int> labels;
  Eigen::VectorXd targets;
  model::BatchInputs view(const model::TIMEModel& m) const;
};
BatchBuffers gather_batch(const model::TIMEModel& m, const PreparedSplit& split,
                          const std::vector<long>& rows);

// Optimizes the trainable set with AdamW (decoupled weight decay), decaying
// the rate on schedule, stopping early on a stale validation metric, and
// restoring the best epoch's parameters. Deterministic for a fixed seed.
RunRecord train_model(model::TIMEModel& m, const PreparedSplit& train_split,
                      const PreparedSplit& val_split, const TrainConfig& cfg);

// Chunked eval-mode predictions for a whole split: probabilities
// (classification) or values (regression).
Eigen::MatrixXd predict_split(const model::TIMEModel& m, const PreparedSplit& split);

// Accuracy (classification) or MSE (regression) on a split.
double evaluate_split(const model::TIMEModel& m, const PreparedSplit& split);

}  // namespace tme::train

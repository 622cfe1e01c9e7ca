#pragma once

// Protocol helpers: masking, metrics, multi-seed aggregation, rankings.

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "tme/data.hpp"

namespace tme::exp {

enum class MaskScope { all_splits, train_only };

struct MaskSpec {
  double ratio = 0.0;
  MaskScope scope = MaskScope::all_splits;
  uint64_t seed = 0;
};

std::string to_string(MaskScope s);
MaskScope scope_from_string(const std::string& s);

// Masks exactly round(ratio * N * d) additional cells, drawn uniformly
// without replacement from the currently observed ones. Values, images,
// and targets stay untouched; asking for more cells than remain observed
// masks them all and warns.
MultimodalDataset mask_tabular(const MultimodalDataset& ds, const MaskSpec& spec);

// Fraction of rows whose argmax matches the target; ties resolve to the
// lowest class index.
double accuracy(const Eigen::MatrixXd& probs, const std::vector<int>& targets);
double mse(const Eigen::VectorXd& preds, const Eigen::VectorXd& targets);

// Mean and sample standard deviation (N-1); requires at least 2 scores.
std::pair<double, double> aggregate_runs(const std::vector<double>& scores);

// "39.60±0.53" style rendering.
std::string format_mean_std(double mean, double std);

// Rank one score column; rank 1 is best, ties share the average rank.
std::vector<double> rank_scores(const std::vector<double>& scores, bool higher_is_better);

// Ranks per dataset column. directions[j] is true when higher is better.
Eigen::MatrixXd rank_models(const Eigen::MatrixXd& table, const std::vector<bool>& directions);

}  // namespace tme::exp

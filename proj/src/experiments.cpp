#include "tme/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace tme::exp {

std::string to_string(MaskScope s) {
  return s == MaskScope::all_splits ? "all-splits" : "train-only";
}

MaskScope scope_from_string(const std::string& s) {
  if (s == "all-splits") return MaskScope::all_splits;
  if (s == "train-only") return MaskScope::train_only;
  throw EngineError("unknown mask scope '" + s + "'");
}

MultimodalDataset mask_tabular(const MultimodalDataset& ds, const MaskSpec& spec) {
  if (!(spec.ratio >= 0.0 && spec.ratio <= 1.0))
    throw EngineError("mask ratio must lie in [0,1]");
  MultimodalDataset out = ds;
  const long n = out.n(), d = out.d();
  const long want = std::lround(spec.ratio * static_cast<double>(n) * static_cast<double>(d));
  if (want == 0) return out;

  std::vector<std::pair<long, long>> observed;
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      if (!out.samples[static_cast<std::size_t>(i)].tabular.missing[static_cast<std::size_t>(j)])
        observed.emplace_back(i, j);

  long take = want;
  if (take > static_cast<long>(observed.size())) {
    warn("mask ratio " + std::to_string(spec.ratio) + " asks for " + std::to_string(want) +
         " cells but only " + std::to_string(observed.size()) + " are observed; masking all");
    take = static_cast<long>(observed.size());
  }
  Rng rng(mix_seed(spec.seed, 0x3a5cULL));
  auto pick = rng.sample_without_replacement(static_cast<long>(observed.size()), take);
  for (long p : pick) {
    auto [i, j] = observed[static_cast<std::size_t>(p)];
    out.samples[static_cast<std::size_t>(i)].tabular.missing[static_cast<std::size_t>(j)] = 1;
  }
  return out;
}

double accuracy(const Eigen::MatrixXd& probs, const std::vector<int>& targets) {
  const long n = probs.rows();
  if (n == 0 || static_cast<long>(targets.size()) != n)
    throw EngineError("accuracy: prediction/target length mismatch");
  long correct = 0;
  for (long i = 0; i < n; ++i) {
    long best = 0;
    for (long j = 1; j < probs.cols(); ++j)
      if (probs(i, j) > probs(i, best)) best = j;
    if (static_cast<int>(best) == targets[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double mse(const Eigen::VectorXd& preds, const Eigen::VectorXd& targets) {
  if (preds.size() == 0 || preds.size() != targets.size())
    throw EngineError("mse: prediction/target length mismatch");
  return (preds - targets).squaredNorm() / static_cast<double>(preds.size());
}

std::pair<double, double> aggregate_runs(const std::vector<double>& scores) {
  const long n = static_cast<long>(scores.size());
  if (n < 2) throw EngineError("aggregate_runs needs at least 2 scores");
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  return {mean, std::sqrt(ss / static_cast<double>(n - 1))};
}

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", mean, std);
  return buf;
}

std::vector<double> rank_scores(const std::vector<double>& scores, bool higher_is_better) {
  const long m = static_cast<long>(scores.size());
  std::vector<long> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0L);
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
    const double x = scores[static_cast<std::size_t>(a)], y = scores[static_cast<std::size_t>(b)];
    return higher_is_better ? x > y : x < y;
  });
  std::vector<double> ranks(static_cast<std::size_t>(m), 0.0);
  long i = 0;
  while (i < m) {
    long j = i;
    while (j + 1 < m && scores[static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])] ==
                            scores[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])])
      ++j;
    // positions i..j share the same score; give them the average rank
    const double avg = static_cast<double>(i + j) / 2.0 + 1.0;
    for (long p = i; p <= j; ++p) ranks[static_cast<std::size_t>(order[static_cast<std::size_t>(p)])] = avg;
    i = j + 1;
  }
  return ranks;
}

Eigen::MatrixXd rank_models(const Eigen::MatrixXd& table, const std::vector<bool>& directions) {
  if (static_cast<long>(directions.size()) != table.cols())
    throw EngineError("rank_models: one direction per dataset column required");
  if (!table.allFinite()) throw EngineError("rank_models: table has missing cells");
  Eigen::MatrixXd ranks(table.rows(), table.cols());
  for (long j = 0; j < table.cols(); ++j) {
    std::vector<double> col(static_cast<std::size_t>(table.rows()));
    for (long i = 0; i < table.rows(); ++i) col[static_cast<std::size_t>(i)] = table(i, j);
    auto r = rank_scores(col, directions[static_cast<std::size_t>(j)]);
    for (long i = 0; i < table.rows(); ++i) ranks(i, j) = r[static_cast<std::size_t>(i)];
  }
  return ranks;
}

}  // namespace tme::exp

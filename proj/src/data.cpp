#include "tme/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

namespace tme {

ValidationReport validate_dataset(const MultimodalDataset& ds) {
  ValidationReport rep;
  if (ds.samples.empty()) {
    rep.violations.push_back("dataset is empty");
    return rep;
  }
  if (ds.n() > kMaxRows)
    rep.violations.push_back("N exceeds " + std::to_string(kMaxRows) +
                             " (N=" + std::to_string(ds.n()) + ")");
  if (ds.d() > kMaxFeatures)
    rep.violations.push_back("d exceeds " + std::to_string(kMaxFeatures) +
                             " (d=" + std::to_string(ds.d()) + ")");
  if (ds.task == TaskKind::classification && ds.n_classes > kMaxClasses)
    rep.violations.push_back("C exceeds " + std::to_string(kMaxClasses) +
                             " (C=" + std::to_string(ds.n_classes) + ")");

  std::unordered_set<std::string> ids;
  for (const auto& s : ds.samples) {
    if (!ids.insert(s.id).second) rep.violations.push_back("duplicate id: " + s.id);
    if (s.tabular.d() != ds.d())
      rep.violations.push_back("sample " + s.id + " has wrong feature count");
    for (long j = 0; j < s.tabular.d(); ++j) {
      if (!s.tabular.missing[static_cast<std::size_t>(j)] &&
          !std::isfinite(s.tabular.values(j))) {
        rep.violations.push_back("non-finite observed value in sample " + s.id + " column " +
                                 std::to_string(j));
      }
    }
    if (ds.task == TaskKind::classification &&
        (s.target.class_index < 0 || s.target.class_index >= ds.n_classes))
      rep.violations.push_back("class index out of range in sample " + s.id);
  }
  return rep;
}

namespace {

// Hamilton (largest remainder) apportionment of `total` across groups,
// proportional to group sizes and capped by them. Ties by lower index.
std::vector<long> apportion(const std::vector<long>& sizes, long total) {
  long n = 0;
  for (long s : sizes) n += s;
  std::size_t g = sizes.size();
  std::vector<long> out(g, 0);
  if (n == 0 || total <= 0) return out;
  std::vector<double> frac(g, 0.0);
  long assigned = 0;
  for (std::size_t i = 0; i < g; ++i) {
    double exact = static_cast<double>(total) * static_cast<double>(sizes[i]) /
                   static_cast<double>(n);
    out[i] = static_cast<long>(std::floor(exact));
    if (out[i] > sizes[i]) out[i] = sizes[i];
    frac[i] = exact - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::vector<std::size_t> order(g);
  for (std::size_t i = 0; i < g; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  std::size_t k = 0;
  while (assigned < total) {
    std::size_t i = order[k % g];
    if (out[i] < sizes[i]) {
      ++out[i];
      ++assigned;
    }
    ++k;
    if (k > 4 * g * static_cast<std::size_t>(total + 1)) break;  // all groups saturated
  }
  return out;
}

// Draws `want[c]` indices per class from `pools[c]`, removing them.
std::vector<long> draw_stratified(std::vector<std::vector<long>>& pools,
                                  const std::vector<long>& want, Rng& rng) {
  std::vector<long> out;
  for (std::size_t c = 0; c < pools.size(); ++c) {
    auto& pool = pools[c];
    long k = want[c];
    for (long i = 0; i < k; ++i) {
      long j = static_cast<long>(rng.uniform_int(i, static_cast<long>(pool.size()) - 1));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    out.insert(out.end(), pool.begin(), pool.begin() + k);
    pool.erase(pool.begin(), pool.begin() + k);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void validate_predefined(const SplitIndices& pre, long n) {
  auto check = [n](const std::vector<long>& v, const char* name) {
    for (long i : v)
      if (i < 0 || i >= n)
        throw EngineError(std::string("predefined split: index out of range in ") + name);
  };
  check(pre.train, "train");
  check(pre.val, "val");
  check(pre.test, "test");
  std::set<long> seen;
  for (const auto* part : {&pre.train, &pre.val, &pre.test})
    for (long i : *part)
      if (!seen.insert(i).second)
        throw EngineError("predefined split: index " + std::to_string(i) + " appears twice");
}

}  // namespace

SplitIndices split_dataset(const MultimodalDataset& ds, uint64_t seed,
                           const std::optional<SplitIndices>& predefined, bool stratified) {
  const long n = ds.n();
  if (n < 1) throw EngineError("split_dataset: empty dataset");

  // The split is a function of the sample ids and the seed only.
  Fnv f;
  for (const auto& s : ds.samples) f.update(s.id);
  Rng rng(mix_seed(seed, f.digest()));

  if (predefined) {
    validate_predefined(*predefined, n);
    if (!predefined->test.empty() && !predefined->val.empty() && !predefined->train.empty()) {
      std::size_t total =
          predefined->train.size() + predefined->val.size() + predefined->test.size();
      if (static_cast<long>(total) != n)
        throw EngineError("predefined split: partition does not cover the dataset");
      return *predefined;
    }
    if (predefined->test.empty())
      throw EngineError("predefined split: test partition required");
  }

  std::vector<uint8_t> in_test(static_cast<std::size_t>(n), 0);
  std::vector<long> test_idx;
  if (predefined) {
    test_idx = predefined->test;
    std::sort(test_idx.begin(), test_idx.end());
    for (long i : test_idx) in_test[static_cast<std::size_t>(i)] = 1;
  }

  bool use_strata = stratified && ds.task == TaskKind::classification && ds.n_classes >= 2;

  auto make_pools = [&](const std::vector<uint8_t>& taken) {
    std::vector<std::vector<long>> pools;
    if (use_strata) {
      pools.resize(static_cast<std::size_t>(ds.n_classes));
      for (long i = 0; i < n; ++i)
        if (!taken[static_cast<std::size_t>(i)])
          pools[static_cast<std::size_t>(ds.samples[static_cast<std::size_t>(i)]
                                             .target.class_index)]
              .push_back(i);
    } else {
      pools.resize(1);
      for (long i = 0; i < n; ++i)
        if (!taken[static_cast<std::size_t>(i)]) pools[0].push_back(i);
    }
    return pools;
  };

  if (!predefined) {
    long n_test = static_cast<long>(std::ceil(0.2 * static_cast<double>(n)));
    auto pools = make_pools(in_test);
    std::vector<long> sizes;
    for (const auto& p : pools) sizes.push_back(static_cast<long>(p.size()));
    test_idx = draw_stratified(pools, apportion(sizes, n_test), rng);
    for (long i : test_idx) in_test[static_cast<std::size_t>(i)] = 1;
  }

  long pool_n = n - static_cast<long>(test_idx.size());
  long n_val = static_cast<long>(std::ceil(0.2 * static_cast<double>(pool_n)));
  auto pools = make_pools(in_test);
  std::vector<long> sizes;
  for (const auto& p : pools) sizes.push_back(static_cast<long>(p.size()));
  std::vector<long> val_idx = draw_stratified(pools, apportion(sizes, n_val), rng);

  SplitIndices out;
  out.test = test_idx;
  out.val = val_idx;
  std::vector<uint8_t> held = in_test;
  for (long i : val_idx) held[static_cast<std::size_t>(i)] = 1;
  for (long i = 0; i < n; ++i)
    if (!held[static_cast<std::size_t>(i)]) out.train.push_back(i);
  return out;
}

}  // namespace tme

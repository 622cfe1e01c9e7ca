#include <algorithm>
#include <limits>
#include <set>

#include "doctest.h"
#include "tme/data.hpp"

using namespace tme;

namespace {

// In-memory dataset; class labels cycle with the given counts.
MultimodalDataset make_ds(const std::vector<long>& class_counts, long d = 3) {
  MultimodalDataset ds;
  ds.task = TaskKind::classification;
  ds.n_classes = static_cast<int>(class_counts.size());
  ds.schema.names.resize(static_cast<std::size_t>(d));
  ds.schema.kinds.assign(static_cast<std::size_t>(d), ColumnKind::numeric);
  for (long j = 0; j < d; ++j) ds.schema.names[static_cast<std::size_t>(j)] = "f" + std::to_string(j);
  long n = 0;
  for (int c = 0; c < ds.n_classes; ++c) {
    for (long i = 0; i < class_counts[static_cast<std::size_t>(c)]; ++i) {
      MultimodalSample s;
      s.id = "s" + std::to_string(n);
      s.image.path = "mem";
      s.image.loaded = ImageArray::zeros(1, 2, 2);
      s.tabular.values = Eigen::VectorXd::Constant(d, static_cast<double>(n));
      s.tabular.missing.assign(static_cast<std::size_t>(d), 0);
      s.target = Target::cls(c);
      ds.samples.push_back(std::move(s));
      ++n;
    }
  }
  return ds;
}

void check_partition(const MultimodalDataset& ds, const SplitIndices& sp) {
  std::set<long> seen;
  for (auto* part : {&sp.train, &sp.val, &sp.test})
    for (long i : *part) {
      CHECK(i >= 0);
      CHECK(i < ds.n());
      CHECK(seen.insert(i).second);  // disjoint
    }
  CHECK(static_cast<long>(seen.size()) == ds.n());
}

std::vector<long> class_histogram(const MultimodalDataset& ds, const std::vector<long>& idx) {
  std::vector<long> h(static_cast<std::size_t>(ds.n_classes), 0);
  for (long i : idx) h[static_cast<std::size_t>(ds.samples[static_cast<std::size_t>(i)].target.class_index)]++;
  return h;
}

}  // namespace

TEST_CASE("split counts follow the ceil rule at reference sizes") {
  // (N, train, val, test) worked out by hand:
  //   test = ceil(0.2*N), val = ceil(0.2*(N-test)), train = rest
  struct Row {
    long n, train, val, test;
  };
  const Row rows[] = {
      {14652, 9376, 2345, 2931},
      {820, 524, 132, 164},
      {2298, 1470, 368, 460},
      {12369, 7916, 1979, 2474},
      {10, 6, 2, 2},
      {1, 0, 0, 1},
  };
  for (const auto& r : rows) {
    CAPTURE(r.n);
    auto ds = make_ds({r.n});  // single class: stratification is a no-op
    auto sp = split_dataset(ds, 0);
    CHECK(static_cast<long>(sp.train.size()) == r.train);
    CHECK(static_cast<long>(sp.val.size()) == r.val);
    CHECK(static_cast<long>(sp.test.size()) == r.test);
    check_partition(ds, sp);
  }
}

TEST_CASE("stratified split apportions classes by largest remainder") {
  // 6+4 over N=10: test quota {1.2, 0.8} -> {1, 1}; val from {5, 3} -> {1, 1}
  auto ds = make_ds({6, 4});
  auto sp = split_dataset(ds, 7);
  CHECK(class_histogram(ds, sp.test) == std::vector<long>{1, 1});
  CHECK(class_histogram(ds, sp.val) == std::vector<long>{1, 1});
  CHECK(class_histogram(ds, sp.train) == std::vector<long>{4, 2});
  check_partition(ds, sp);
}

TEST_CASE("stratified split keeps proportions at scale") {
  auto ds = make_ds({700, 200, 100});
  auto sp = split_dataset(ds, 3);
  auto h = class_histogram(ds, sp.test);
  // test = 200; quotas 140/40/20 land exactly
  CHECK(h == std::vector<long>{140, 40, 20});
  check_partition(ds, sp);
}

TEST_CASE("split is a pure function of ids and seed") {
  auto ds = make_ds({30, 20});
  auto a = split_dataset(ds, 5);
  auto b = split_dataset(ds, 5);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  auto c = split_dataset(ds, 6);
  CHECK(a.test != c.test);
}

TEST_CASE("predefined full partition passes through untouched") {
  auto ds = make_ds({10});
  SplitIndices pre;
  pre.train = {0, 1, 2, 3, 4, 5};
  pre.val = {6, 7};
  pre.test = {8, 9};
  auto sp = split_dataset(ds, 0, pre);
  CHECK(sp.train == pre.train);
  CHECK(sp.val == pre.val);
  CHECK(sp.test == pre.test);
}

TEST_CASE("predefined test set: validation carved from the remainder by the ceil rule") {
  auto ds = make_ds({10});
  SplitIndices pre;
  pre.test = {0, 1, 2};
  auto sp = split_dataset(ds, 1, pre);
  CHECK(sp.test == std::vector<long>{0, 1, 2});
  // remainder 7 -> val = ceil(1.4) = 2, train = 5
  CHECK(sp.val.size() == 2);
  CHECK(sp.train.size() == 5);
  check_partition(ds, sp);
  for (long i : sp.val) CHECK(i >= 3);
  for (long i : sp.train) CHECK(i >= 3);
}

TEST_CASE("predefined partition with bad indices is rejected") {
  auto ds = make_ds({5});
  SplitIndices pre;
  pre.test = {3, 99};
  CHECK_THROWS_AS(split_dataset(ds, 0, pre), EngineError);
  SplitIndices dup;
  dup.train = {0, 1, 2};
  dup.val = {2, 3};
  dup.test = {4};
  CHECK_THROWS_AS(split_dataset(ds, 0, dup), EngineError);
}

TEST_CASE("unstratified split still obeys the ceil rule") {
  auto ds = make_ds({9, 1});
  auto sp = split_dataset(ds, 2, std::nullopt, false);
  CHECK(sp.test.size() == 2);
  CHECK(sp.val.size() == 2);
  CHECK(sp.train.size() == 6);
  check_partition(ds, sp);
}

TEST_CASE("validation flags integrity violations") {
  auto ok = make_ds({4, 4});
  CHECK(validate_dataset(ok).ok());

  SUBCASE("NaN under an observed mask") {
    auto ds = make_ds({4, 4});
    ds.samples[2].tabular.values[1] = std::numeric_limits<double>::quiet_NaN();
    auto rep = validate_dataset(ds);
    CHECK_FALSE(rep.ok());
  }
  SUBCASE("NaN under a missing mask is fine") {
    auto ds = make_ds({4, 4});
    ds.samples[2].tabular.values[1] = std::numeric_limits<double>::quiet_NaN();
    ds.samples[2].tabular.missing[1] = 1;
    CHECK(validate_dataset(ds).ok());
  }
  SUBCASE("duplicate ids") {
    auto ds = make_ds({4, 4});
    ds.samples[3].id = ds.samples[0].id;
    CHECK_FALSE(validate_dataset(ds).ok());
  }
  SUBCASE("class index out of range") {
    auto ds = make_ds({4, 4});
    ds.samples[1].target.class_index = 9;
    CHECK_FALSE(validate_dataset(ds).ok());
  }
  SUBCASE("row width mismatch") {
    auto ds = make_ds({4, 4});
    ds.samples[1].tabular.values = Eigen::VectorXd::Zero(1);
    ds.samples[1].tabular.missing.assign(1, 0);
    CHECK_FALSE(validate_dataset(ds).ok());
  }
  SUBCASE("size bounds are findings, not errors") {
    auto ds = make_ds({10001}, 1);
    auto rep = validate_dataset(ds);
    CHECK_FALSE(rep.ok());
    bool names_bound = false;
    for (const auto& v : rep.violations)
      if (v.find("10000") != std::string::npos) names_bound = true;
    CHECK(names_bound);
  }
}

TEST_CASE("splits cover many sizes without gaps or drops") {
  for (long n : {2L, 3L, 7L, 23L, 101L, 997L}) {
    auto ds = make_ds({n});
    auto sp = split_dataset(ds, 11);
    check_partition(ds, sp);
    long test = (n + 4) / 5;           // ceil(0.2 n)
    long val = (n - test + 4) / 5;     // ceil(0.2 (n - test))
    CHECK(static_cast<long>(sp.test.size()) == test);
    CHECK(static_cast<long>(sp.val.size()) == val);
  }
}

#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "tme/common.hpp"

using namespace tme;

TEST_CASE("fnv1a matches published test vectors") {
  // reference vectors from the FNV specification
  CHECK(Fnv::of_string("") == 0xcbf29ce484222325ULL);
  CHECK(Fnv::of_string("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(Fnv::of_string("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("fnv incremental equals one-shot") {
  Fnv f;
  f.update("foo");
  f.update("bar");
  CHECK(f.digest() == Fnv::of_string("foobar"));
}

TEST_CASE("hex64 is fixed-width lowercase") {
  CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
  CHECK(hex64(0) == "0000000000000000");
  CHECK(hex64(UINT64_MAX) == "ffffffffffffffff");
}

TEST_CASE("mix_seed separates streams") {
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
  CHECK(mix_seed(0, 0) != mix_seed(0, 1));
  CHECK(mix_seed(7, 3) == mix_seed(7, 3));
}

TEST_CASE("rng is reproducible per seed") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    uint64_t x = a.next_u64();
    all_equal = all_equal && (x == b.next_u64());
    any_diff = any_diff || (x != c.next_u64());
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("uniform stays in [0,1) and covers the range") {
  Rng r(1);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("uniform_int hits both inclusive endpoints, roughly evenly") {
  Rng r(7);
  std::vector<int> counts(6, 0);
  for (int i = 0; i < 60000; ++i) counts[static_cast<std::size_t>(r.uniform_int(0, 5))]++;
  for (int k = 0; k < 6; ++k) {
    CHECK(counts[static_cast<std::size_t>(k)] > 9000);
    CHECK(counts[static_cast<std::size_t>(k)] < 11000);
  }
  CHECK_THROWS_AS((void)r.uniform_int(3, 2), EngineError);
}

TEST_CASE("normal has the right first two moments") {
  Rng r(11);
  const int n = 50000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    sum += x;
    sq += x * x;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("shuffle permutes") {
  Rng r(3);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
  auto orig = v;
  r.shuffle(v);
  CHECK(v != orig);  // astronomically unlikely to be identity
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == orig);
}

TEST_CASE("sample_without_replacement returns k distinct in-range values") {
  Rng r(5);
  auto s = r.sample_without_replacement(100, 30);
  CHECK(s.size() == 30);
  std::set<long> seen(s.begin(), s.end());
  CHECK(seen.size() == 30);
  CHECK(*seen.begin() >= 0);
  CHECK(*seen.rbegin() < 100);

  auto all = r.sample_without_replacement(10, 10);
  std::set<long> everything(all.begin(), all.end());
  CHECK(everything.size() == 10);
}

TEST_CASE("warn hook captures messages") {
  std::vector<std::string> got;
  set_warn_hook([&](const std::string& m) { got.push_back(m); });
  warn("something odd");
  set_warn_hook(nullptr);
  REQUIRE(got.size() == 1);
  CHECK(got[0] == "something odd");
}

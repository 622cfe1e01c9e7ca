#include <cmath>
#include <functional>

#include "doctest.h"
#include "tme/fusion.hpp"

using namespace tme;
using namespace tme::fusion;
using nn::NodePtr;
using nn::Tape;

namespace {

NodePtr row(Tape* t, std::initializer_list<double> vals) {
  nn::Mat m(1, static_cast<long>(vals.size()));
  long j = 0;
  for (double v : vals) m(0, j++) = v;
  return nn::constant(t, m);
}

NodePtr random_rows(Tape* t, Rng& rng, long n, long d) {
  nn::Mat m(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) m(i, j) = rng.normal();
  return nn::constant(t, m);
}

}  // namespace

TEST_CASE("cat keeps tabular entries first and preserves order") {
  auto z = fuse_cat(nullptr, row(nullptr, {1, 2}), row(nullptr, {3, 4, 5}));
  REQUIRE(z->cols() == 5);
  for (long j = 0; j < 5; ++j) CHECK(z->mat()(0, j) == doctest::Approx(j + 1));

  auto z2 = fuse_cat(nullptr, row(nullptr, {0, 0}), row(nullptr, {7}));
  CHECK(z2->mat()(0, 0) == 0.0);
  CHECK(z2->mat()(0, 2) == 7.0);
}

TEST_CASE("sum and max value oracles") {
  auto s = fuse_sum(nullptr, row(nullptr, {1, 2}), row(nullptr, {3, 4}));
  CHECK(s->mat()(0, 0) == 4.0);
  CHECK(s->mat()(0, 1) == 6.0);
  auto m = fuse_max(nullptr, row(nullptr, {1, 5}), row(nullptr, {3, 4}));
  CHECK(m->mat()(0, 0) == 3.0);
  CHECK(m->mat()(0, 1) == 5.0);
  CHECK_THROWS_AS(fuse_sum(nullptr, row(nullptr, {1}), row(nullptr, {1, 2})), EngineError);
  CHECK_THROWS_AS(fuse_max(nullptr, row(nullptr, {1}), row(nullptr, {1, 2})), EngineError);
}

TEST_CASE("sum commutes, max commutes and is idempotent: 1000 random pairs") {
  Rng rng(42);
  for (int it = 0; it < 1000; ++it) {
    const long d = 1 + static_cast<long>(rng.uniform_int(0, 15));
    nn::Mat a(1, d), b(1, d);
    for (long j = 0; j < d; ++j) {
      a(0, j) = rng.normal();
      b(0, j) = rng.normal();
    }
    auto na = nn::constant(nullptr, a), nb = nn::constant(nullptr, b);
    auto ab = fuse_sum(nullptr, na, nb), ba = fuse_sum(nullptr, nb, na);
    REQUIRE(ab->value.size() == ba->value.size());
    REQUIRE((ab->value == ba->value).all());
    auto mab = fuse_max(nullptr, na, nb), mba = fuse_max(nullptr, nb, na);
    REQUIRE((mab->value == mba->value).all());
    auto maa = fuse_max(nullptr, na, na);
    REQUIRE((maa->value == na->value).all());
  }
}

TEST_CASE("projection applies bias-free linear maps") {
  ProjectionParams p(3, 2, 2);
  // W_T rows are output channels
  p.w_t.w.mat() << 1, 2, 3, 4, 5, 6;
  p.w_i.w.mat() << 1, 0, 0, 1;
  auto [tp, ip] = project(nullptr, p, row(nullptr, {1, 1, 1}), row(nullptr, {9, 8}));
  CHECK(tp->mat()(0, 0) == doctest::Approx(6));
  CHECK(tp->mat()(0, 1) == doctest::Approx(15));
  CHECK(ip->mat()(0, 0) == doctest::Approx(9));
  CHECK(ip->mat()(0, 1) == doctest::Approx(8));
  CHECK_FALSE(p.w_t.has_bias);
  CHECK_FALSE(p.w_i.has_bias);
  CHECK_THROWS_AS(project(nullptr, p, row(nullptr, {1}), row(nullptr, {9, 8})), EngineError);

  ProjectionParams ident(2, 2, 2);
  ident.w_t.w.mat() << 1, 0, 0, 1;
  auto [same, zero] = project(nullptr, ident, row(nullptr, {4, 7}), row(nullptr, {5, 5}));
  CHECK(same->mat()(0, 0) == 4.0);
  CHECK(same->mat()(0, 1) == 7.0);
  CHECK(zero->mat()(0, 0) == 0.0);  // weights default to zero
}

TEST_CASE("daft is exactly identity at initialization") {
  Rng rng(3);
  for (long k : {2L, 5L, 192L}) {
    DAFTParams p(k);
    p.init(rng);
    CHECK(p.hidden_width(k) == (2 * k + 6) / 7);
    Tape t;
    auto e_t = random_rows(&t, rng, 4, k);
    auto e_i = random_rows(&t, rng, 4, k);
    auto z = fuse_daft(&t, p, e_t, e_i);
    CHECK((z->value - e_i->value).abs().maxCoeff() == 0.0);
  }
  // ceil semantics: 2k/7 rounded up
  CHECK(DAFTParams::hidden_width(192) == 55);
  CHECK(DAFTParams::hidden_width(7) == 2);
  CHECK(DAFTParams::hidden_width(3) == 1);
}

TEST_CASE("daft with forced unit scale doubles the image embedding") {
  DAFTParams p(3);
  // zero f1 keeps the bottleneck silent; route through f2's bias instead
  p.f1.init_zero();
  p.f2.init_zero();
  for (long j = 0; j < 3; ++j) p.f2.b.value[j] = 1.0;  // alpha = 1, beta = 0
  auto z = fuse_daft(nullptr, p, row(nullptr, {5, 5, 5}), row(nullptr, {1, 2, 3}));
  CHECK(z->mat()(0, 0) == doctest::Approx(2));
  CHECK(z->mat()(0, 1) == doctest::Approx(4));
  CHECK(z->mat()(0, 2) == doctest::Approx(6));
}

TEST_CASE("daft gradients match finite differences") {
  Rng rng(9);
  const long k = 4;
  DAFTParams p(k);
  p.init(rng);
  // nudge f2 off its zero init so the modulation path carries gradient
  for (long i = 0; i < p.f2.w.size(); ++i) p.f2.w.value[i] = 0.3 * rng.normal();
  for (long i = 0; i < p.f2.b.size(); ++i) p.f2.b.value[i] = 0.3 * rng.normal();

  nn::Mat et(3, k), ei(3, k);
  for (long i = 0; i < et.size(); ++i) {
    et.data()[i] = rng.normal();
    ei.data()[i] = rng.normal();
  }
  nn::ParamList ps;
  p.collect(ps);

  auto loss_fn = [&](Tape* t) {
    auto z = fuse_daft(t, p, nn::constant(t, et), nn::constant(t, ei));
    return nn::sum_all(t, nn::mul(t, z, z));
  };
  Tape tape;
  auto loss = loss_fn(&tape);
  for (auto* q : ps) q->zero_grad();
  tape.backward(loss);

  for (auto* q : ps) {
    for (long i = 0; i < q->size(); ++i) {
      const double orig = q->value[i], h = 1e-5;
      q->value[i] = orig + h;
      const double fp = loss_fn(nullptr)->value[0];
      q->value[i] = orig - h;
      const double fm = loss_fn(nullptr)->value[0];
      q->value[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double rel = std::abs(fd - q->grad[i]) / std::max(1.0, std::abs(fd));
      INFO(q->name, " coord ", i);
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("dimension contract holds for random widths") {
  Rng rng(11);
  for (int it = 0; it < 20; ++it) {
    const long d_t = 1 + static_cast<long>(rng.uniform_int(0, 40));
    const long d_i = 1 + static_cast<long>(rng.uniform_int(0, 40));
    const long k = 1 + static_cast<long>(rng.uniform_int(0, 40));
    for (Strategy s : {Strategy::cat, Strategy::sum, Strategy::max, Strategy::daft}) {
      Fusion f(s, d_t, d_i, k);
      f.init(rng);
      Tape t;
      auto z = f.forward(&t, random_rows(&t, rng, 2, d_t), random_rows(&t, rng, 2, d_i));
      CHECK(z->cols() == (s == Strategy::cat ? d_t + d_i : k));
      CHECK(z->rows() == 2);
    }
  }
}

TEST_CASE("evaluation never mutates fusion parameters") {
  Rng rng(13);
  for (Strategy s : {Strategy::sum, Strategy::max, Strategy::daft}) {
    Fusion f(s, 6, 5, 4);
    f.init(rng);
    const uint64_t before = nn::params_hash(f.params());
    for (int it = 0; it < 3; ++it)
      (void)f.forward(nullptr, random_rows(nullptr, rng, 3, 6), random_rows(nullptr, rng, 3, 5));
    CHECK(nn::params_hash(f.params()) == before);
  }
}

TEST_CASE("strategy names round-trip") {
  for (Strategy s : {Strategy::cat, Strategy::sum, Strategy::max, Strategy::daft})
    CHECK(strategy_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(strategy_from_string("mean"), EngineError);
}

#include <cmath>
#include <functional>
#include <sstream>

#include "doctest.h"
#include "tme/nn.hpp"

using namespace tme;
using namespace tme::nn;

namespace {

// Central-difference check of d(loss)/d(param) for every coordinate.
void gradcheck(const std::vector<Parameter*>& ps, const std::function<NodePtr(Tape*)>& f,
               double h = 1e-5, double tol = 2e-6) {
  Tape tape;
  auto loss = f(&tape);
  REQUIRE(loss->is_scalar());
  for (auto* p : ps) p->zero_grad();
  tape.backward(loss);
  std::vector<Arr> analytic;
  for (auto* p : ps) analytic.push_back(p->grad);

  for (std::size_t pi = 0; pi < ps.size(); ++pi) {
    Parameter& p = *ps[pi];
    for (long i = 0; i < p.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double fp = f(nullptr)->value[0];
      p.value[i] = orig - h;
      const double fm = f(nullptr)->value[0];
      p.value[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[pi][i];
      const double scale = std::max({1.0, std::abs(fd), std::abs(an)});
      INFO("param ", p.name, " coord ", i, " analytic ", an, " fd ", fd);
      CHECK(std::abs(an - fd) <= tol * scale);
    }
  }
}

Parameter randn_param(const std::string& name, std::vector<long> shape, Rng& rng,
                      double sd = 1.0) {
  Parameter p(name, std::move(shape));
  for (long i = 0; i < p.size(); ++i) p.value[i] = sd * rng.normal();
  return p;
}

}  // namespace

TEST_CASE("matmul value oracle") {
  Mat a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  auto r = matmul(nullptr, constant(nullptr, a), constant(nullptr, b));
  CHECK(r->mat()(0, 0) == doctest::Approx(19));
  CHECK(r->mat()(0, 1) == doctest::Approx(22));
  CHECK(r->mat()(1, 0) == doctest::Approx(43));
  CHECK(r->mat()(1, 1) == doctest::Approx(50));
}

TEST_CASE("matmul gradients") {
  Rng rng(1);
  auto a = randn_param("a", {3, 4}, rng);
  auto b = randn_param("b", {4, 2}, rng);
  gradcheck({&a, &b}, [&](Tape* t) {
    return sum_all(t, matmul(t, leaf(t, a), leaf(t, b)));
  });
}

TEST_CASE("matmul_nt equals matmul with transposed operand") {
  Rng rng(2);
  auto a = randn_param("a", {3, 4}, rng);
  auto bT = randn_param("bT", {2, 4}, rng);
  Tape t;
  auto r = matmul_nt(&t, leaf(&t, a), leaf(&t, bT));
  Mat expect = a.mat() * bT.mat().transpose();
  CHECK((r->mat() - expect).cwiseAbs().maxCoeff() < 1e-12);
  gradcheck({&a, &bT}, [&](Tape* tt) {
    return sum_all(tt, matmul_nt(tt, leaf(tt, a), leaf(tt, bT)));
  });
}

TEST_CASE("elementwise op gradients") {
  Rng rng(3);
  auto a = randn_param("a", {2, 3}, rng);
  auto b = randn_param("b", {2, 3}, rng);
  // keep relu inputs away from the kink
  for (long i = 0; i < a.size(); ++i)
    if (std::abs(a.value[i]) < 0.05) a.value[i] = 0.1;

  gradcheck({&a, &b}, [&](Tape* t) { return sum_all(t, mul(t, leaf(t, a), leaf(t, b))); });
  gradcheck({&a, &b}, [&](Tape* t) { return sum_all(t, sub(t, leaf(t, a), leaf(t, b))); });
  gradcheck({&a}, [&](Tape* t) { return sum_all(t, relu(t, leaf(t, a))); });
  gradcheck({&a}, [&](Tape* t) { return sum_all(t, gelu(t, leaf(t, a))); });
  gradcheck({&a}, [&](Tape* t) { return sum_all(t, tanh_act(t, leaf(t, a))); });
  gradcheck({&a}, [&](Tape* t) { return mean_all(t, scale(t, leaf(t, a), 3.5)); });
  gradcheck({&a}, [&](Tape* t) { return mean_all(t, add_scalar(t, leaf(t, a), -1.25)); });
}

TEST_CASE("emax picks the max and routes gradient there") {
  Mat a(1, 3), b(1, 3);
  a << 1, 5, 2;
  b << 3, 4, 2;
  auto r = emax(nullptr, constant(nullptr, a), constant(nullptr, b));
  CHECK(r->mat()(0, 0) == 3);
  CHECK(r->mat()(0, 1) == 5);
  CHECK(r->mat()(0, 2) == 2);

  Rng rng(4);
  auto pa = randn_param("pa", {2, 3}, rng);
  auto pb = randn_param("pb", {2, 3}, rng);
  // separate the operands so fd does not straddle a tie
  for (long i = 0; i < pa.size(); ++i)
    if (std::abs(pa.value[i] - pb.value[i]) < 0.05) pb.value[i] += 0.2;
  gradcheck({&pa, &pb}, [&](Tape* t) { return sum_all(t, emax(t, leaf(t, pa), leaf(t, pb))); });
}

TEST_CASE("add_rowvec broadcasts and accumulates bias gradient") {
  Rng rng(5);
  auto x = randn_param("x", {4, 3}, rng);
  auto b = randn_param("b", {1, 3}, rng);
  Tape t;
  auto r = add_rowvec(&t, leaf(&t, x), leaf(&t, b));
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 3; ++j)
      CHECK(r->mat()(i, j) == doctest::Approx(x.mat()(i, j) + b.mat()(0, j)));
  gradcheck({&x, &b}, [&](Tape* tt) {
    return sum_all(tt, mul(tt, add_rowvec(tt, leaf(tt, x), leaf(tt, b)),
                           add_rowvec(tt, leaf(tt, x), leaf(tt, b))));
  });
}

TEST_CASE("concat and slice are inverses") {
  Rng rng(6);
  auto a = randn_param("a", {2, 3}, rng);
  auto b = randn_param("b", {2, 2}, rng);
  Tape t;
  auto cat = concat_cols(&t, leaf(&t, a), leaf(&t, b));
  CHECK(cat->cols() == 5);
  auto back = slice_cols(&t, cat, 3, 2);
  CHECK((back->mat() - b.mat()).cwiseAbs().maxCoeff() == 0.0);
  gradcheck({&a, &b}, [&](Tape* tt) {
    auto c = concat_cols(tt, leaf(tt, a), leaf(tt, b));
    auto s = slice_cols(tt, c, 1, 3);
    return sum_all(tt, mul(tt, s, s));
  });
}

TEST_CASE("rowwise_dot matches per-row inner products") {
  Rng rng(21);
  auto a = randn_param("a", {3, 4}, rng);
  auto b = randn_param("b", {3, 4}, rng);
  Tape t;
  auto r = rowwise_dot(&t, leaf(&t, a), leaf(&t, b));
  REQUIRE(r->rows() == 3);
  REQUIRE(r->cols() == 1);
  for (long i = 0; i < 3; ++i)
    CHECK(r->mat()(i, 0) == doctest::Approx(a.mat().row(i).dot(b.mat().row(i))));
  gradcheck({&a, &b}, [&](Tape* tt) {
    auto d = rowwise_dot(tt, leaf(tt, a), leaf(tt, b));
    return sum_all(tt, mul(tt, d, d));
  });
}

TEST_CASE("mul_colvec scales each row by its coefficient") {
  Rng rng(22);
  auto a = randn_param("a", {3, 4}, rng);
  auto c = randn_param("c", {3, 1}, rng);
  Tape t;
  auto r = mul_colvec(&t, leaf(&t, a), leaf(&t, c));
  for (long i = 0; i < 3; ++i)
    CHECK((r->mat().row(i) - c.mat()(i, 0) * a.mat().row(i)).cwiseAbs().maxCoeff() < 1e-14);
  gradcheck({&a, &c}, [&](Tape* tt) {
    auto m = mul_colvec(tt, leaf(tt, a), leaf(tt, c));
    return sum_all(tt, mul(tt, m, m));
  });
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(7);
  auto a = randn_param("a", {3, 5}, rng);
  Tape t;
  auto s = softmax_rows(&t, leaf(&t, a));
  for (long i = 0; i < 3; ++i) CHECK(s->mat().row(i).sum() == doctest::Approx(1.0));
  gradcheck({&a}, [&](Tape* tt) {
    auto sm = softmax_rows(tt, leaf(tt, a));
    return sum_all(tt, mul(tt, sm, sm));
  });
}

TEST_CASE("layer_norm standardizes each row") {
  Mat x(1, 4);
  x << 1, 2, 3, 4;
  Parameter gamma("g", {1, 4}), beta("b", {1, 4});
  gamma.value.setOnes();
  auto r = layer_norm(nullptr, constant(nullptr, x), leaf(nullptr, gamma), leaf(nullptr, beta));
  double mean = r->mat().row(0).mean();
  double var = (r->mat().row(0).array() - mean).square().mean();
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(r->mat()(0, 0) < r->mat()(0, 3));

  Rng rng(8);
  auto xx = randn_param("x", {3, 6}, rng);
  auto g = randn_param("g", {1, 6}, rng);
  auto b = randn_param("b", {1, 6}, rng);
  gradcheck({&xx, &g, &b}, [&](Tape* t) {
    auto ln = layer_norm(t, leaf(t, xx), leaf(t, g), leaf(t, b));
    return sum_all(t, mul(t, ln, ln));
  }, 1e-5, 5e-6);
}

TEST_CASE("gather_rows selects rows and accumulates duplicate grads") {
  Rng rng(9);
  auto tab = randn_param("tab", {4, 3}, rng);
  std::vector<int> idx{2, 0, 2};
  Tape t;
  auto g = gather_rows(&t, leaf(&t, tab), idx);
  CHECK((g->mat().row(0) - tab.mat().row(2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((g->mat().row(1) - tab.mat().row(0)).cwiseAbs().maxCoeff() == 0.0);
  gradcheck({&tab}, [&](Tape* tt) {
    auto gg = gather_rows(tt, leaf(tt, tab), idx);
    return sum_all(tt, mul(tt, gg, gg));
  });
}

TEST_CASE("softmax cross-entropy value oracles") {
  // uniform logits over 4 classes: loss = ln 4
  Mat z = Mat::Zero(2, 4);
  auto loss4 = softmax_ce(nullptr, constant(nullptr, z), {1, 3}, 4);
  CHECK(loss4->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // restriction to the first 3 of 5 columns: ln 3, junk in dead columns ignored
  Mat z5 = Mat::Zero(2, 5);
  z5(0, 3) = 99.0;
  z5(1, 4) = -99.0;
  auto loss3 = softmax_ce(nullptr, constant(nullptr, z5), {0, 2}, 3);
  CHECK(loss3->value[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy gradients, restricted columns") {
  Rng rng(10);
  auto logits = randn_param("logits", {4, 6}, rng);
  std::vector<int> labels{0, 2, 1, 3};
  gradcheck({&logits}, [&](Tape* t) {
    return softmax_ce(t, leaf(t, logits), labels, 4);
  });
  // dead columns must get zero gradient
  Tape t;
  logits.zero_grad();
  auto loss = softmax_ce(&t, leaf(&t, logits), labels, 4);
  t.backward(loss);
  for (long r = 0; r < 4; ++r)
    for (long c = 4; c < 6; ++c)
      CHECK(logits.grad[r * 6 + c] == 0.0);
}

TEST_CASE("mse value oracle and gradient") {
  Mat p(1, 2);
  p << 1, 2;
  Arr target(2);
  target << 0, 0;
  auto l = mse_loss(nullptr, constant(nullptr, p), target);
  CHECK(l->value[0] == doctest::Approx(2.5));

  Rng rng(11);
  auto pred = randn_param("pred", {3, 1}, rng);
  Arr tgt(3);
  tgt << 0.5, -1.0, 2.0;
  gradcheck({&pred}, [&](Tape* t) { return mse_loss(t, leaf(t, pred), tgt); });
}

TEST_CASE("conv2d value oracle") {
  // 3x3 ones, 2x2 ones kernel, no pad: every output is 4
  Parameter x("x", {1, 1 * 3 * 3});
  x.shape = {1, 1, 3, 3};
  x.value = Arr::Ones(9);
  Parameter w("w", {1, 4});
  w.value = Arr::Ones(4);
  Parameter b("b", {1, 1});
  b.value[0] = 0.5;
  auto out = conv2d(nullptr, leaf(nullptr, x), leaf(nullptr, w), leaf(nullptr, b), 2, 2, 1, 0);
  REQUIRE(out->shape == std::vector<long>{1, 1, 2, 2});
  for (long i = 0; i < 4; ++i) CHECK(out->value[i] == doctest::Approx(4.5));
}

TEST_CASE("conv2d gradients with stride and padding") {
  Rng rng(12);
  Parameter x = randn_param("x", {2, 2 * 5 * 5}, rng, 0.5);
  x.shape = {2, 2, 5, 5};
  Parameter w = randn_param("w", {3, 2 * 3 * 3}, rng, 0.3);
  Parameter b = randn_param("b", {1, 3}, rng, 0.1);
  gradcheck({&x, &w, &b}, [&](Tape* t) {
    auto y = conv2d(t, leaf(t, x), leaf(t, w), leaf(t, b), 3, 3, 2, 1);
    return sum_all(t, mul(t, y, y));
  }, 1e-5, 1e-5);
}

TEST_CASE("global_avg_pool averages each channel plane") {
  Parameter x("x", {1, 8});
  x.shape = {1, 2, 2, 2};
  for (long i = 0; i < 8; ++i) x.value[i] = static_cast<double>(i + 1);
  auto y = global_avg_pool(nullptr, leaf(nullptr, x));
  REQUIRE(y->shape == std::vector<long>{1, 2});
  CHECK(y->value[0] == doctest::Approx(2.5));
  CHECK(y->value[1] == doctest::Approx(6.5));

  Rng rng(13);
  Parameter xx = randn_param("xx", {2, 3 * 2 * 2}, rng);
  xx.shape = {2, 3, 2, 2};
  gradcheck({&xx}, [&](Tape* t) {
    auto p = global_avg_pool(t, leaf(t, xx));
    return sum_all(t, mul(t, p, p));
  });
}

TEST_CASE("channel_affine scales and shifts per channel") {
  Rng rng(14);
  Parameter x = randn_param("x", {2, 3 * 2 * 2}, rng);
  x.shape = {2, 3, 2, 2};
  Parameter s = randn_param("s", {1, 3}, rng);
  Parameter o = randn_param("o", {1, 3}, rng);
  auto y = channel_affine(nullptr, leaf(nullptr, x), leaf(nullptr, s), leaf(nullptr, o));
  // spot-check one element: channel 1 of sample 0
  double expect = x.value[4] * s.value[1] + o.value[1];
  CHECK(y->value[4] == doctest::Approx(expect));
  gradcheck({&x, &s, &o}, [&](Tape* t) {
    auto yy = channel_affine(t, leaf(t, x), leaf(t, s), leaf(t, o));
    return sum_all(t, mul(t, yy, yy));
  });
}

TEST_CASE("adamw single step matches hand computation") {
  // p=1, g=0.5, lr=0.1, wd=0.01:
  //   m_hat=0.5, v_hat=0.25, step = 0.1*(0.5/(0.5+1e-8) + 0.01) -> p ~ 0.899000002
  Parameter p("p", {1, 1});
  p.value[0] = 1.0;
  p.grad[0] = 0.5;
  AdamW opt({&p}, 0.1, 0.01);
  opt.step();
  CHECK(p.value[0] == doctest::Approx(0.899000002).epsilon(1e-9));
}

TEST_CASE("adamw decouples weight decay from the gradient path") {
  // zero gradient: pure decay, p -= lr*wd*p
  Parameter p("p", {1, 1});
  p.value[0] = 2.0;
  p.grad[0] = 0.0;
  AdamW opt({&p}, 0.5, 0.1);
  opt.step();
  CHECK(p.value[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0));
}

TEST_CASE("clip_grad_norm rescales to the cap and reports the raw norm") {
  Parameter p("p", {1, 2});
  p.grad[0] = 3.0;
  p.grad[1] = 4.0;
  double raw = clip_grad_norm({&p}, 1.0);
  CHECK(raw == doctest::Approx(5.0));
  CHECK(p.grad[0] == doctest::Approx(0.6));
  CHECK(p.grad[1] == doctest::Approx(0.8));
  // under the cap: untouched
  Parameter q("q", {1, 1});
  q.grad[0] = 0.5;
  double raw2 = clip_grad_norm({&q}, 1.0);
  CHECK(raw2 == doctest::Approx(0.5));
  CHECK(q.grad[0] == doctest::Approx(0.5));
}

TEST_CASE("linear layer learns a line") {
  Rng rng(15);
  Linear lin("lin", 1, 1);
  lin.init_xavier(rng);
  ParamList ps;
  lin.collect(ps);
  AdamW opt(ps, 0.05, 0.0);

  Mat x(8, 1), y(8, 1);
  for (int i = 0; i < 8; ++i) {
    x(i, 0) = i * 0.25 - 1.0;
    y(i, 0) = 2.0 * x(i, 0) + 1.0;
  }
  Arr target = Eigen::Map<Arr>(y.data(), 8);
  double loss_val = 1e9;
  for (int step = 0; step < 400; ++step) {
    Tape t;
    auto pred = lin.forward(&t, constant(&t, x));
    auto loss = mse_loss(&t, pred, target);
    opt.zero_grad();
    t.backward(loss);
    opt.step();
    loss_val = loss->value[0];
  }
  CHECK(loss_val < 1e-4);
  CHECK(lin.w.value[0] == doctest::Approx(2.0).epsilon(0.05));
  CHECK(lin.b.value[0] == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("parameter serialization round-trips and hashes change with content") {
  Rng rng(16);
  auto a = randn_param("a", {3, 4}, rng);
  auto b = randn_param("b", {1, 4}, rng);
  uint64_t h1 = params_hash({&a, &b});
  std::stringstream ss;
  write_params(ss, {&a, &b});

  auto a2 = a, b2 = b;
  a2.value.setZero();
  b2.value.setZero();
  CHECK(params_hash({&a2, &b2}) != h1);
  read_params(ss, {&a2, &b2});
  CHECK((a2.value - a.value).abs().maxCoeff() == 0.0);
  CHECK((b2.value - b.value).abs().maxCoeff() == 0.0);
  CHECK(params_hash({&a2, &b2}) == h1);
}

TEST_CASE("embedding gathers learned rows") {
  Rng rng(17);
  Embedding emb("emb", 5, 3);
  emb.init_normal(rng, 0.5);
  auto out = emb.forward(nullptr, {4, 1});
  CHECK((out->mat().row(0) - emb.table.mat().row(4)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out->mat().row(1) - emb.table.mat().row(1)).cwiseAbs().maxCoeff() == 0.0);
}

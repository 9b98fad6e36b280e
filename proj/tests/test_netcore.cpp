#include <cmath>
#include <limits>

#include "doctest.h"
#include "qan/error.hpp"
#include "qan/gradcheck.hpp"
#include "qan/netcore.hpp"
#include "qan/rng.hpp"

using namespace qan;

namespace {

DenseLayer eye2(Activation act) {
  DenseLayer l("eye", 2, 2, act);
  l.weight.at(0, 0) = 1.0;
  l.weight.at(1, 1) = 1.0;
  return l;
}

}  // namespace

TEST_CASE("dense forward on identity weights") {
  const Vector x = {3.0, -1.0};
  CHECK(dense_forward(eye2(Activation::kIdentity), x).output == Vector{3.0, -1.0});
  CHECK(dense_forward(eye2(Activation::kRelu), x).output == Vector{3.0, 0.0});

  DenseLayer s("s", 4, 3, Activation::kSigmoid);
  auto y = dense_forward(s, Vector{0.3, -7.0, 2.0, 11.0}).output;
  for (double v : y) CHECK(v == 0.5);
}

TEST_CASE("dense forward rejects the wrong input width") {
  DenseLayer l("trunk.l1", 3, 2, Activation::kRelu);
  CHECK_THROWS_WITH_AS(dense_forward(l, Vector{1.0, 2.0}),
                       doctest::Contains("trunk.l1"), Error);
}

TEST_CASE("dense backward") {
  SUBCASE("identity jacobian") {
    DenseLayer l = eye2(Activation::kIdentity);
    auto c = dense_forward(l, Vector{0.4, 2.0});
    CHECK(dense_backward(l, c, Vector{1.5, -2.5}) == Vector{1.5, -2.5});
  }
  SUBCASE("dead relu") {
    DenseLayer l = eye2(Activation::kRelu);
    auto c = dense_forward(l, Vector{-1.0, -3.0});
    CHECK(dense_backward(l, c, Vector{4.0, 5.0}) == Vector{0.0, 0.0});
    for (double g : l.weight.grad) CHECK(g == 0.0);
  }
  SUBCASE("dy length mismatch") {
    DenseLayer l = eye2(Activation::kRelu);
    auto c = dense_forward(l, Vector{1.0, 1.0});
    CHECK_THROWS_AS(dense_backward(l, c, Vector{1.0}), Error);
  }
}

TEST_CASE("dense backward matches finite differences") {
  for (Activation act : {Activation::kIdentity, Activation::kSigmoid, Activation::kRelu}) {
    Rng rng(17);
    DenseLayer l("l", 3, 2, act);
    init_params(l, rng, InitScheme::kUniformHe);
    for (double& b : l.bias.value) b = 0.3 * rng.normal();
    Vector x = {0.7, -0.4, 1.1};
    const Vector dy = {0.8, -1.3};
    auto loss = [&](const DenseLayer& layer, std::span<const double> in) {
      return dot(dense_forward(layer, in).output, dy);
    };
    auto c = dense_forward(l, x);
    if (act == Activation::kRelu) {
      for (double z : c.pre) REQUIRE(std::abs(z) > 1e-3);
    }
    Vector dx = dense_backward(l, c, dy);

    Vector ndx = numeric_grad([&](std::span<const double> p) { return loss(l, p); }, x);
    for (std::size_t i = 0; i < dx.size(); ++i) CHECK(relative_error(dx[i], ndx[i]) < 1e-6);

    Vector ndw = numeric_grad(
        [&](std::span<const double> p) {
          DenseLayer m = l;
          m.weight.value.assign(p.begin(), p.end());
          return loss(m, x);
        },
        l.weight.value);
    for (std::size_t i = 0; i < ndw.size(); ++i) {
      CHECK(relative_error(l.weight.grad[i], ndw[i]) < 1e-6);
    }
    Vector ndb = numeric_grad(
        [&](std::span<const double> p) {
          DenseLayer m = l;
          m.bias.value.assign(p.begin(), p.end());
          return loss(m, x);
        },
        l.bias.value);
    for (std::size_t i = 0; i < ndb.size(); ++i) {
      CHECK(relative_error(l.bias.grad[i], ndb[i]) < 1e-6);
    }
  }
}

TEST_CASE("sgd step") {
  Parameter p("p", 1, 1);
  ParamStore ps = {&p};

  p.value = {1.0};
  p.grad = {2.0};
  sgd_step(ps, 0.1, 0.0);
  CHECK(p.value[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(p.grad[0] == 0.0);

  Parameter still("still", 1, 1);
  still.value = {0.25};
  sgd_step({&still}, 0.1, 0.9);
  CHECK(still.value[0] == 0.25);

  Parameter q("q", 1, 1);
  ParamStore qs = {&q};
  for (int step = 0; step < 2; ++step) {
    q.grad = {1.0};
    sgd_step(qs, 1.0, 0.9);
  }
  CHECK(q.value[0] == doctest::Approx(-2.9).epsilon(1e-15));
}

TEST_CASE("sgd step refuses non-finite gradients and leaves everything untouched") {
  Parameter a("trunk.l1.weight", 1, 2);
  Parameter b("quality.out.bias", 1, 1);
  a.grad = {1.0, 1.0};
  b.grad = {std::numeric_limits<double>::quiet_NaN()};
  ParamStore ps = {&a, &b};
  CHECK_THROWS_WITH_AS(sgd_step(ps, 0.1, 0.9), doctest::Contains("quality.out.bias"), Error);
  CHECK(a.value == Vector{0.0, 0.0});
  CHECK(a.velocity == Vector{0.0, 0.0});
}

TEST_CASE("init schemes") {
  Rng rng(3);
  DenseLayer z("z", 2, 2, Activation::kRelu);
  init_params(z, rng, InitScheme::kZeros);
  for (double v : z.weight.value) CHECK(v == 0.0);

  DenseLayer a("a", 7, 5, Activation::kRelu), b("b", 7, 5, Activation::kRelu);
  Rng r1(42), r2(42);
  init_params(a, r1, InitScheme::kUniformHe);
  init_params(b, r2, InitScheme::kUniformHe);
  CHECK(a.weight.value == b.weight.value);

  Parameter big("big", 1000, 100);
  Rng r3(9);
  init_uniform_he(big, 6, r3);
  double lo = 1.0, hi = -1.0;
  for (double v : big.value) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -1.0);
  CHECK(hi <= 1.0);
  CHECK(hi - lo > 1.9);
}

TEST_CASE("compensated sum keeps small terms") {
  CompensatedSum s;
  s.add(1e16);
  for (int i = 0; i < 1000; ++i) s.add(1.0);
  s.add(-1e16);
  CHECK(s.value() == 1000.0);
}

TEST_CASE("rng") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(11);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 70000; ++i) ++hits[r.below(7)];
  for (int h : hits) CHECK(std::abs(h - 10000) < 500);
  double m = 0.0, m2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    m += z;
    m2 += z * z;
  }
  CHECK(std::abs(m / n) < 0.01);
  CHECK(std::abs(m2 / n - 1.0) < 0.02);
}

#include <cmath>

#include "doctest.h"
#include "qan/gradcheck.hpp"
#include "qan/losses.hpp"

using namespace qan;

TEST_CASE("triplet loss hand cases") {
  SUBCASE("satisfied margin") {
    auto r = triplet_loss(Vector{1, 1}, Vector{1, 1}, Vector{2, 1}, 0.5);
    CHECK(r.loss == 0.0);
    CHECK_FALSE(r.active);
    CHECK(r.grad_anchor == Vector{0, 0});
    CHECK(r.grad_negative == Vector{0, 0});
  }
  SUBCASE("collision") {
    auto r = triplet_loss(Vector{0.3, 2}, Vector{0.3, 2}, Vector{0.3, 2}, 0.5);
    CHECK(r.loss == 0.5);
    CHECK(r.active);
    for (const Vector* g : {&r.grad_anchor, &r.grad_positive, &r.grad_negative}) {
      CHECK(*g == Vector{0, 0});
    }
  }
  SUBCASE("line") {
    const Vector a = {0, 0}, p = {1, 0}, n = {2, 0};
    auto r = triplet_loss(a, p, n, 0.5);
    CHECK(r.raw == -2.5);
    CHECK(r.loss == 0.0);
    r = triplet_loss(a, p, n, 4.0);
    CHECK(r.raw == 1.0);
    CHECK(r.loss == 1.0);
    CHECK(r.grad_anchor == Vector{2, 0});
    CHECK(r.grad_positive == Vector{2, 0});
    CHECK(r.grad_negative == Vector{-4, 0});
  }
  SUBCASE("without the hinge the raw value is returned") {
    auto r = triplet_loss(Vector{0, 0}, Vector{1, 0}, Vector{2, 0}, 0.5, false);
    CHECK(r.loss == -2.5);
    CHECK(r.grad_anchor == Vector{2, 0});
  }
}

TEST_CASE("triplet gradient matches finite differences") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    Vector all(9);
    for (double& v : all) v = rng.normal();
    auto f = [](std::span<const double> x) {
      return triplet_loss(x.subspan(0, 3), x.subspan(3, 3), x.subspan(6, 3), 50.0).loss;
    };
    auto r = triplet_loss(std::span(all).subspan(0, 3), std::span(all).subspan(3, 3),
                          std::span(all).subspan(6, 3), 50.0);
    REQUIRE(r.active);
    Vector num = numeric_grad(f, all);
    Vector ana = r.grad_anchor;
    ana.insert(ana.end(), r.grad_positive.begin(), r.grad_positive.end());
    ana.insert(ana.end(), r.grad_negative.begin(), r.grad_negative.end());
    for (std::size_t i = 0; i < 9; ++i) CHECK(relative_error(ana[i], num[i]) < 1e-6);
  }
}

TEST_CASE("softmax cross-entropy") {
  SUBCASE("uniform") {
    DenseLayer c("classifier", 3, 2, Activation::kIdentity);
    auto r = softmax_xent(c, Vector{1, 2, 3}, 0);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(r.grad_logits[0] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(softmax_loss(c, Vector{1, 2, 3}, 1) == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("saturated") {
    DenseLayer c("classifier", 1, 2, Activation::kIdentity);
    c.bias.value = {50.0, 0.0};
    auto r = softmax_xent(c, Vector{0.0}, 0);
    CHECK(r.loss < 1e-20);
    CHECK(std::isfinite(softmax_loss(c, Vector{0.0}, 1)));
    c.bias.value = {2000.0, 0.0};
    CHECK(softmax_loss(c, Vector{0.0}, 1) == doctest::Approx(2000.0));
  }
  SUBCASE("label out of range") {
    DenseLayer c("classifier", 1, 2, Activation::kIdentity);
    CHECK_THROWS(softmax_xent(c, Vector{0.0}, 2));
  }
  SUBCASE("input and weight gradients match finite differences") {
    Rng rng(8);
    DenseLayer c("classifier", 4, 3, Activation::kIdentity);
    init_params(c, rng, InitScheme::kUniformHe);
    Vector x = {0.2, -1.0, 0.5, 0.9};
    auto r = softmax_xent(c, x, 2, 0.7);
    Vector nx = numeric_grad(
        [&](std::span<const double> p) { return 0.7 * softmax_loss(c, p, 2); }, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(relative_error(r.grad_input[i], nx[i]) < 1e-6);
    }
    Vector nw = numeric_grad(
        [&](std::span<const double> p) {
          DenseLayer m = c;
          m.weight.value.assign(p.begin(), p.end());
          return 0.7 * softmax_loss(m, x, 2);
        },
        c.weight.value);
    for (std::size_t i = 0; i < nw.size(); ++i) {
      CHECK(relative_error(c.weight.grad[i], nw[i]) < 1e-6);
    }
  }
}

TEST_CASE("combine losses") {
  const double ln2 = std::log(2.0);
  CHECK(combine_losses(0.7, Vector{3.0, 4.0}, 0.0).total == 0.7);
  CHECK(combine_losses(0.0, Vector{ln2, ln2}, 1.0).total == doctest::Approx(ln2).epsilon(1e-15));
  auto v = combine_losses(1.0, Vector{0.2, 0.4, 0.6}, 0.5);
  CHECK(v.l_class == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(v.total == doctest::Approx(1.2).epsilon(1e-15));
}

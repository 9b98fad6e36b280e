#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "qan/error.hpp"
#include "qan/eval.hpp"

using namespace qan;

namespace {

SetFeatures features(IdentityId id, std::vector<Vector> R, Vector q = {}) {
  SetFeatures f;
  f.identity = id;
  f.set_id = id;
  f.mu_raw.assign(R.size(), 0.5);
  f.q_true = q.empty() ? Vector(R.size(), 1.0) : q;
  f.R = std::move(R);
  return f;
}

DistanceMatrix random_matrix(Rng& rng, std::size_t p, std::size_t g, bool coarse) {
  DistanceMatrix d(p, Vector(g));
  for (auto& row : d) {
    for (double& v : row) v = coarse ? static_cast<double>(rng.below(4)) : rng.uniform();
  }
  return d;
}

}  // namespace

TEST_CASE("method names round trip") {
  for (EvalMethod m : {EvalMethod::kQan, EvalMethod::kAvePool, EvalMethod::kOracle,
                       EvalMethod::kMinCos, EvalMethod::kMinL2}) {
    CHECK(eval_method_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(eval_method_from_string("maxpool"), Error);
}

TEST_CASE("pooling methods") {
  SUBCASE("singleton agrees everywhere") {
    SetFeatures f = features(0, {{0.3, -0.4}}, {0.2});
    f.mu_raw = {0.9};
    for (PoolMethod m : {PoolMethod::kQan, PoolMethod::kAvePool, PoolMethod::kOracle}) {
      CHECK(pool(m, f).vector == Vector{0.3, -0.4});
    }
  }
  SUBCASE("equal ground truth reduces oracle to average") {
    SetFeatures f = features(0, {{1, 0}, {0, 1}, {2, 2}});
    CHECK(pool(PoolMethod::kOracle, f).vector == pool(PoolMethod::kAvePool, f).vector);
    f.q_true = {0.4, 0.4, 0.4};
    Vector a = pool(PoolMethod::kOracle, f).vector, b = pool(PoolMethod::kAvePool, f).vector;
    for (std::size_t k = 0; k < 2; ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-15));
  }
  SUBCASE("oracle ignores a fully corrupted sample") {
    SetFeatures f = features(0, {{1, 2}, {5, -5}}, {1.0, 0.0});
    CHECK(pool(PoolMethod::kOracle, f).vector == Vector{1, 2});
  }
  SUBCASE("oracle with zero total quality falls back to uniform") {
    SetFeatures f = features(0, {{1, 0}, {0, 1}}, {0.0, 0.0});
    Pooled p = pool(PoolMethod::kOracle, f);
    CHECK(p.used_fallback);
    CHECK(p.vector == Vector{0.5, 0.5});
  }
  SUBCASE("qan uses normalized raw scores") {
    SetFeatures f = features(0, {{2, 0}, {0, 4}});
    f.mu_raw = {0.2, 0.6};
    Vector v = pool(PoolMethod::kQan, f).vector;
    CHECK(v[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(v[1] == doctest::Approx(3.0).epsilon(1e-15));
  }
}

TEST_CASE("set distances") {
  SetFeatures s = features(0, {{0.6, 0.8}});
  for (EvalMethod m : {EvalMethod::kQan, EvalMethod::kAvePool, EvalMethod::kOracle,
                       EvalMethod::kMinCos, EvalMethod::kMinL2}) {
    CHECK(set_distance(m, s, s) == doctest::Approx(0.0));
  }
  SetFeatures a = features(0, {{1, 0, 0}, {0, 1, 0}, {3, 3, 3}});
  SetFeatures b = features(1, {{-1, 2, 7}, {0, 2, 0}});
  CHECK(set_distance(EvalMethod::kMinCos, a, b) == doctest::Approx(0.0));
  CHECK(set_distance(EvalMethod::kMinCos, a, b) == set_distance(EvalMethod::kMinCos, b, a));

  // cosine distances a1-b1 .3, a1-b2 .7, a2-b1 .9, a2-b2 .4
  SetFeatures c = features(0, {{1, 0, 0, 0}, {0, 1, 0, 0}});
  SetFeatures d = features(1, {{0.7, 0.1, std::sqrt(0.5), 0}, {0.3, 0.6, 0, std::sqrt(0.55)}});
  CHECK(cosine_distance(c.R[1], d.R[0]) == doctest::Approx(0.9));
  CHECK(cosine_distance(c.R[1], d.R[1]) == doctest::Approx(0.4));
  CHECK(set_distance(EvalMethod::kMinCos, c, d) == doctest::Approx(0.3).epsilon(1e-12));

  CHECK_THROWS_AS(cosine_distance(Vector{0, 0}, Vector{1, 0}), Error);
}

TEST_CASE("cmc on hand-built matrices") {
  const std::vector<std::size_t> diag = {0, 1, 2};
  SUBCASE("diagonal truth") {
    DistanceMatrix d = {{.1, .2, .3}, {.5, .4, .6}, {.9, .8, .7}};
    CmcTable t = cmc_from_distances(d, diag);
    CHECK(t.at(1) == oracle::cmc_curve(d, diag)[0]);
    CHECK(t.at(1) == 1.0);
  }
  SUBCASE("one miss") {
    DistanceMatrix d = {{.1, .2, .3}, {.3, .4, .6}, {.9, .8, .7}};
    CmcTable t = cmc_from_distances(d, diag);
    CHECK(t.at(1) == doctest::Approx(2.0 / 3.0));
    CHECK(t.at(2) == 1.0);
  }
  SUBCASE("constant distances follow index order") {
    DistanceMatrix d(4, Vector(4, 1.0));
    std::vector<std::size_t> truth = {0, 1, 2, 3};
    CmcTable t = cmc_from_distances(d, truth);
    for (std::size_t k = 1; k <= 4; ++k) CHECK(t.at(k) == doctest::Approx(k / 4.0));
    CHECK(t.at(20) == 1.0);
  }
}

TEST_CASE("cmc matches brute force and is monotone") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t p = 1 + rng.below(6), g = 1 + rng.below(8);
    DistanceMatrix d = random_matrix(rng, p, g, trial % 2 == 0);
    std::vector<std::size_t> truth(p);
    for (auto& t : truth) t = rng.below(g);
    CmcTable t = cmc_from_distances(d, truth);
    CHECK(t.curve == oracle::cmc_curve(d, truth));
    for (std::size_t k = 1; k < t.curve.size(); ++k) CHECK(t.curve[k] >= t.curve[k - 1]);
    CHECK(t.curve.back() == 1.0);
  }
}

TEST_CASE("cmc over set features") {
  std::vector<SetFeatures> probes = {features(0, {{1, 0}}), features(1, {{0, 1}})};
  std::vector<SetFeatures> gallery = {features(1, {{0, 1}}), features(0, {{1, 0}})};
  CHECK(cmc(probes, probes, EvalMethod::kAvePool).at(1) == 1.0);
  CHECK(cmc(probes, gallery, EvalMethod::kMinL2).at(1) == 1.0);

  gallery.push_back(features(1, {{0.5, 0.5}}));
  CHECK_THROWS_WITH_AS(cmc(probes, gallery, EvalMethod::kAvePool), doctest::Contains("1"), Error);
  std::vector<SetFeatures> partial = {features(1, {{0, 1}})};
  CHECK_THROWS_WITH_AS(cmc(probes, partial, EvalMethod::kAvePool), doctest::Contains("absent"),
                       Error);
}

TEST_CASE("roc hand cases") {
  SUBCASE("separated") {
    RocReport r = roc_from_scores(Vector{.9, .8, .2, .1}, {true, true, false, false});
    CHECK(r.auc == 1.0);
    CHECK(r.accuracy == 1.0);
    for (double t : r.tpr_at) CHECK(t == 1.0);
  }
  SUBCASE("constant scores") {
    RocReport r = roc_from_scores(Vector{.5, .5, .5, .5}, {true, false, true, false});
    CHECK(r.auc == 0.5);
    CHECK(r.points.size() == 2);
  }
  SUBCASE("interleaved") {
    Vector s = {.9, .8, .85, .1};
    std::vector<bool> y = {true, true, false, false};
    RocReport r = roc_from_scores(s, y);
    CHECK(r.auc == doctest::Approx(0.75));
    CHECK(r.auc == doctest::Approx(oracle::roc(s, y).auc));
    CHECK(r.accuracy == 0.75);
  }
  SUBCASE("single class rejected") {
    CHECK_THROWS_AS(roc_from_scores(Vector{.1, .2}, {true, true}), Error);
  }
}

TEST_CASE("roc matches brute force and ignores monotone rescaling") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    Vector s(n);
    std::vector<bool> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 3 == 0 ? static_cast<double>(rng.below(5)) : rng.normal();
      y[i] = rng.bernoulli(0.5);
    }
    y[0] = true;
    y[1] = false;
    RocReport r = roc_from_scores(s, y);
    oracle::Roc o = oracle::roc(s, y);
    REQUIRE(r.points.size() == o.points.size());
    for (std::size_t i = 0; i < r.points.size(); ++i) {
      CHECK(r.points[i].fpr == o.points[i].fpr);
      CHECK(r.points[i].tpr == o.points[i].tpr);
    }
    CHECK(r.auc == doctest::Approx(o.auc).epsilon(1e-12));
    CHECK(r.accuracy == o.accuracy);
    for (std::size_t t = 0; t < 3; ++t) CHECK(r.tpr_at[t] == o.tpr_at[t]);

    Vector warped = s;
    for (double& v : warped) v = std::exp(2.0 * v) - 3.0;
    CHECK(roc_from_scores(warped, y).auc == r.auc);
  }
}

TEST_CASE("verification pairs") {
  std::vector<SetFeatures> sets;
  for (IdentityId id = 0; id < 5; ++id) {
    sets.push_back(features(id, {{1, 0}}));
    sets.push_back(features(id, {{0, 1}}));
  }
  Rng rng(3);
  auto pairs = make_verification_pairs(sets, rng);
  std::size_t pos = 0;
  for (const auto& p : pairs) {
    CHECK(p.a < p.b);
    CHECK((sets[p.a].identity == sets[p.b].identity) == p.same);
    pos += p.same ? 1 : 0;
  }
  CHECK(pos == 5);
  CHECK(pairs.size() == 10);
}

TEST_CASE("agreement statistics") {
  Vector q = {0.1, 0.5, 1.0, 1.0, 0.3};
  Vector same = q;
  AgreementReport r = agreement_from_scores(same, q);
  CHECK(r.spearman_rho == doctest::Approx(1.0));
  CHECK(r.pairwise_agreement == 1.0);
  Vector anti;
  for (double v : q) anti.push_back(-v);
  r = agreement_from_scores(anti, q);
  CHECK(r.spearman_rho == doctest::Approx(-1.0));
  CHECK(r.pairwise_agreement == 0.0);
  CHECK(r.deciles[9].count == 2);
  CHECK(r.deciles[1].count == 1);
  CHECK(r.deciles[9].mean_mu_raw == -1.0);
  CHECK_THROWS_AS(agreement_from_scores(Vector{0.1, 0.2}, Vector{1.0, 1.0}), Error);
  CHECK(spearman(Vector{1, 2, 2, 3}, Vector{10, 20, 20, 30}) == doctest::Approx(1.0));
}

TEST_CASE("evaluate end to end") {
  GenSpec gs;
  gs.n_identities = 12;
  gs.seed = 5;
  Dataset d = generate(gs);
  QanConfig c;
  c.d_in = d.d_in;
  c.n_classes = 12;
  QanModel m(c, 1);

  SUBCASE("flat quality head equals average pooling") {
    DenseLayer& out = m.quality_head.back();
    std::fill(out.weight.value.begin(), out.weight.value.end(), 0.0);
    std::fill(out.bias.value.begin(), out.bias.value.end(), 0.0);
    EvalReport r = evaluate(m, d, {EvalMethod::kQan, EvalMethod::kAvePool}, 1);
    CHECK(r.get(EvalMethod::kQan).cmc.curve == r.get(EvalMethod::kAvePool).cmc.curve);
    CHECK(r.get(EvalMethod::kQan).roc.auc == r.get(EvalMethod::kAvePool).roc.auc);
  }
  SUBCASE("only the requested methods are reported") {
    EvalReport r = evaluate(m, d, {EvalMethod::kAvePool}, 1);
    const std::string csv = r.cmc_csv();
    CHECK(csv.find("qan") == std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    const std::string roc_rows = r.roc_csv();
    CHECK(std::count(roc_rows.begin(), roc_rows.end(), '\n') == 2);
    CHECK_THROWS_AS(r.get(EvalMethod::kQan), Error);
  }
  SUBCASE("deterministic") {
    std::vector<EvalMethod> all = {EvalMethod::kQan, EvalMethod::kAvePool, EvalMethod::kOracle,
                                   EvalMethod::kMinCos};
    EvalReport a = evaluate(m, d, all, 9), b = evaluate(m, d, all, 9);
    CHECK(a.cmc_csv() == b.cmc_csv());
    CHECK(a.roc_csv() == b.roc_csv());
    CHECK(a.deciles_csv() == b.deciles_csv());
  }
  SUBCASE("input width must match") {
    QanConfig wide = c;
    wide.d_in = d.d_in + 1;
    QanModel w(wide, 1);
    CHECK_THROWS_WITH_AS(evaluate(w, d, {EvalMethod::kAvePool}, 1), doctest::Contains("d_in"),
                         Error);
  }
}

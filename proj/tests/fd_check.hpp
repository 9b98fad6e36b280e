#ifndef QAN_TESTS_FD_CHECK_HPP_
#define QAN_TESTS_FD_CHECK_HPP_

#include <cmath>

#include "qan/gradcheck.hpp"

// Entry-wise comparison of the analytic triplet gradient with central
// differences. An entry is accepted when it is within `rel` relatively or
// within `abs_floor` absolutely; the latter covers entries so close to zero
// that roundoff in f dominates. Returns how many entries failed both.
inline std::size_t fd_mismatches(const qan::TripletInstance& inst, double rel = 1e-6,
                                 double abs_floor = 1e-10) {
  using namespace qan;
  const LabelMap labels(inst.data);
  const ImageSet& a = inst.data.sets[0];
  const ImageSet& p = inst.data.sets[1];
  const ImageSet& n = inst.data.sets[2];
  QanModel analytic = inst.model;
  zero_grads(analytic.params());
  accumulate_triplet(analytic, a, p, n, labels, inst.hinge);
  QanModel probe = inst.model;
  std::size_t bad = 0;
  for (std::size_t b = 0; b < probe.params().size(); ++b) {
    Parameter& target = *probe.params()[b];
    const Vector original = target.value;
    Vector num = numeric_grad(
        [&](std::span<const double> v) {
          std::copy(v.begin(), v.end(), target.value.begin());
          return triplet_objective(probe, a, p, n, labels, inst.hinge);
        },
        original);
    target.value = original;
    const Vector& g = analytic.params()[b]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (relative_error(g[i], num[i]) >= rel && std::abs(g[i] - num[i]) >= abs_floor) ++bad;
    }
  }
  return bad;
}

#endif  // QAN_TESTS_FD_CHECK_HPP_

// Brute-force reference implementations shared by the unit tests and the
// acceptance run. They enumerate instead of sweeping.
#ifndef QAN_TESTS_ORACLES_HPP_
#define QAN_TESTS_ORACLES_HPP_

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "qan/eval.hpp"

namespace oracle {

// Sorts each row by (distance, gallery index) and reads off where the true
// match landed.
inline std::vector<double> cmc_curve(const qan::DistanceMatrix& dist,
                                     const std::vector<std::size_t>& truth) {
  const std::size_t g = dist.front().size();
  std::vector<double> hits(g, 0.0);
  for (std::size_t p = 0; p < dist.size(); ++p) {
    std::vector<std::size_t> order(g);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (dist[p][a] != dist[p][b]) return dist[p][a] < dist[p][b];
      return a < b;
    });
    const std::size_t pos = std::find(order.begin(), order.end(), truth[p]) - order.begin();
    for (std::size_t k = pos; k < g; ++k) hits[k] += 1.0;
  }
  for (double& h : hits) h /= static_cast<double>(dist.size());
  return hits;
}

struct Roc {
  std::vector<qan::RocPoint> points;
  double auc = 0.0;
  double accuracy = 0.0;
  std::vector<double> tpr_at;
};

// Thresholds: +inf and every distinct score; predict "same" when s >= t.
// AUC counts positive/negative pairs with ties worth one half.
inline Roc roc(const std::vector<double>& scores, const std::vector<bool>& same) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  std::vector<double> ts = {std::numeric_limits<double>::infinity()};
  ts.insert(ts.end(), thresholds.begin(), thresholds.end());
  double P = 0, N = 0;
  for (bool s : same) (s ? P : N) += 1;
  Roc r;
  for (double t : ts) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) (same[i] ? tp : fp) += 1;
    }
    r.points.push_back({fp / N, tp / P});
    r.accuracy = std::max(r.accuracy, (tp + N - fp) / (P + N));
  }
  double wins = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (!same[i] || same[j]) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  r.auc = wins / (P * N);
  for (double target : qan::RocReport::kTargets) {
    double best = 0.0;
    for (const auto& p : r.points) {
      if (p.fpr <= target) best = std::max(best, p.tpr);
    }
    r.tpr_at.push_back(best);
  }
  return r;
}

}  // namespace oracle

#endif  // QAN_TESTS_ORACLES_HPP_

#ifndef QAN_EVAL_HPP_
#define QAN_EVAL_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qan/dataset.hpp"
#include "qan/model.hpp"
#include "qan/rng.hpp"

namespace qan {

enum class PoolMethod { kQan, kAvePool, kOracle };
enum class SetMetric { kPooledL2, kPooledCos, kMinCos, kMinL2 };

/// A set-to-set comparison recipe as reported in evaluation tables.
enum class EvalMethod { kQan, kAvePool, kOracle, kMinCos, kMinL2 };

std::string_view to_string(EvalMethod m);
EvalMethod eval_method_from_string(std::string_view name);

/// Per-sample network outputs for one set, computed once and reused by every
/// aggregation method.
struct SetFeatures {
  IdentityId identity = 0;
  SetId set_id = 0;
  std::vector<Vector> R;
  Vector mu_raw;
  Vector q_true;
};

SetFeatures extract_features(const QanModel& model, const ImageSet& set);

struct Pooled {
  Vector vector;
  bool used_fallback = false;  // oracle weights were all zero
};

/// qan: learned normalized qualities; avepool: 1/N; oracle: weights
/// proportional to q_true, uniform when they are all zero.
Pooled pool(PoolMethod method, const SetFeatures& f);
Pooled aggregate(PoolMethod method, const QanModel& model, const ImageSet& set);

double pooled_distance(SetMetric metric, std::span<const double> a, std::span<const double> b);
/// Minimum over all cross pairs of the per-pair distance (cosine distance
/// for kMinCos, euclidean for kMinL2).
double min_pair_distance(SetMetric metric, const std::vector<Vector>& A,
                         const std::vector<Vector>& B);

double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Distance between two sets under an evaluation method.
double set_distance(EvalMethod method, const SetFeatures& a, const SetFeatures& b);

struct CmcTable {
  static constexpr std::array<std::size_t, 4> kReportRanks = {1, 5, 10, 20};
  // curve[k-1] = matching rate within the top k, for k = 1..gallery size.
  std::vector<double> curve;

  double at(std::size_t k) const;
};

using DistanceMatrix = std::vector<Vector>;  // rows are probes

/// Rank of each probe's true match: strictly closer gallery entries plus
/// equally distant entries with a lower gallery index, plus one.
std::vector<std::size_t> match_ranks(const DistanceMatrix& dist,
                                     std::span<const std::size_t> true_index);
CmcTable cmc_from_distances(const DistanceMatrix& dist,
                            std::span<const std::size_t> true_index);

/// Requires every probe identity to appear exactly once in the gallery.
CmcTable cmc(const std::vector<SetFeatures>& probes, const std::vector<SetFeatures>& gallery,
             EvalMethod method);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocReport {
  static constexpr std::array<double, 3> kTargets = {1e-3, 1e-2, 1e-1};
  std::vector<RocPoint> points;  // (0,0) first, (1,1) last
  double auc = 0.0;
  double accuracy = 0.0;
  std::array<double, 3> tpr_at{};
};

/// Higher score means "same identity". Thresholds sweep every distinct score
/// in descending order; tied scores move along a diagonal segment.
RocReport roc_from_scores(std::span<const double> scores, const std::vector<bool>& same);

struct SetPair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool same = false;
};

/// Every same-identity pair plus an equal number of random different-identity
/// pairs.
std::vector<SetPair> make_verification_pairs(const std::vector<SetFeatures>& sets, Rng& rng);

RocReport roc(const std::vector<SetFeatures>& sets, const std::vector<SetPair>& pairs,
              EvalMethod method);

struct DecileRow {
  std::size_t bin = 0;  // q_true in [bin/10, (bin+1)/10), last bin closed
  std::size_t count = 0;
  double mean_mu_raw = 0.0;
};

struct AgreementReport {
  double spearman_rho = 0.0;
  double pairwise_agreement = 0.0;
  std::vector<DecileRow> deciles;
};

/// Pearson correlation of average ranks.
double spearman(std::span<const double> a, std::span<const double> b);
/// Fraction of pairs with distinct truth whose score order matches.
double pairwise_agreement(std::span<const double> scores, std::span<const double> truth);
AgreementReport agreement_from_scores(std::span<const double> scores,
                                      std::span<const double> truth);
AgreementReport quality_agreement(const QanModel& model, const Dataset& d);

struct MethodReport {
  EvalMethod method;
  CmcTable cmc;
  RocReport roc;
};

struct EvalReport {
  std::vector<MethodReport> methods;
  AgreementReport agreement;

  const MethodReport& get(EvalMethod m) const;

  std::string cmc_csv() const;
  std::string roc_csv() const;
  std::string agreement_csv() const;
  std::string deciles_csv() const;
  std::string table() const;
};

/// The first two sets of each identity (in file order) become probe and
/// gallery; identities with a single set are left out of CMC.
void split_probe_gallery(const std::vector<SetFeatures>& sets, std::vector<SetFeatures>& probes,
                         std::vector<SetFeatures>& gallery);

EvalReport evaluate(const QanModel& model, const Dataset& d,
                    const std::vector<EvalMethod>& methods, std::uint64_t pair_seed);

}  // namespace qan

#endif  // QAN_EVAL_HPP_

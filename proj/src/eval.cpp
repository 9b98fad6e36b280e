#include "qan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "qan/error.hpp"
#include "qan/textio.hpp"

namespace qan {

std::string_view to_string(EvalMethod m) {
  switch (m) {
    case EvalMethod::kQan:
      return "qan";
    case EvalMethod::kAvePool:
      return "avepool";
    case EvalMethod::kOracle:
      return "oracle";
    case EvalMethod::kMinCos:
      return "mincos";
    case EvalMethod::kMinL2:
      return "minl2";
  }
  return "unknown";
}

EvalMethod eval_method_from_string(std::string_view name) {
  if (name == "qan") return EvalMethod::kQan;
  if (name == "avepool") return EvalMethod::kAvePool;
  if (name == "oracle") return EvalMethod::kOracle;
  if (name == "mincos" || name == "min-cos") return EvalMethod::kMinCos;
  if (name == "minl2" || name == "min-l2") return EvalMethod::kMinL2;
  throw Error("unknown evaluation method '" + std::string(name) + "'");
}

SetFeatures extract_features(const QanModel& model, const ImageSet& set) {
  if (set.samples.empty()) throw Error("set " + std::to_string(set.set_id) + " is empty");
  SetFeatures f;
  f.identity = set.identity;
  f.set_id = set.set_id;
  for (const Sample& s : set.samples) {
    SampleForward fwd = forward_sample(model, s.x);
    f.R.push_back(fwd.embedding());
    f.mu_raw.push_back(fwd.mu_raw());
    f.q_true.push_back(s.q_true);
  }
  return f;
}

Pooled pool(PoolMethod method, const SetFeatures& f) {
  const std::size_t n = f.R.size();
  Pooled out;
  Vector weights;
  switch (method) {
    case PoolMethod::kQan:
      weights = normalize_qualities(f.mu_raw);
      break;
    case PoolMethod::kAvePool:
      weights.assign(n, 1.0 / static_cast<double>(n));
      break;
    case PoolMethod::kOracle: {
      CompensatedSum total;
      for (double q : f.q_true) total.add(q);
      if (total.value() > 0.0) {
        weights.resize(n);
        for (std::size_t i = 0; i < n; ++i) weights[i] = f.q_true[i] / total.value();
      } else {
        std::cerr << "warning: set " << f.set_id
                  << " has zero total ground-truth quality; using uniform weights\n";
        weights.assign(n, 1.0 / static_cast<double>(n));
        out.used_fallback = true;
      }
      break;
    }
  }
  out.vector = set_pool_forward(f.R, weights);
  return out;
}

Pooled aggregate(PoolMethod method, const QanModel& model, const ImageSet& set) {
  return pool(method, extract_features(model, set));
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  const double na = std::sqrt(squared_norm(a));
  const double nb = std::sqrt(squared_norm(b));
  if (na == 0.0 || nb == 0.0) throw Error("cosine distance of a zero-norm vector");
  return 1.0 - dot(a, b) / (na * nb);
}

namespace {

double l2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(s);
}

}  // namespace

double pooled_distance(SetMetric metric, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("set distance: dimension mismatch");
  switch (metric) {
    case SetMetric::kPooledL2:
    case SetMetric::kMinL2:
      return l2(a, b);
    case SetMetric::kPooledCos:
    case SetMetric::kMinCos:
      return cosine_distance(a, b);
  }
  return 0.0;
}

double min_pair_distance(SetMetric metric, const std::vector<Vector>& A,
                         const std::vector<Vector>& B) {
  if (A.empty() || B.empty()) throw Error("set distance: empty set");
  double best = std::numeric_limits<double>::infinity();
  for (const Vector& a : A) {
    for (const Vector& b : B) best = std::min(best, pooled_distance(metric, a, b));
  }
  return best;
}

namespace {

bool is_pooled(EvalMethod m) {
  return m == EvalMethod::kQan || m == EvalMethod::kAvePool || m == EvalMethod::kOracle;
}

PoolMethod pool_method(EvalMethod m) {
  switch (m) {
    case EvalMethod::kAvePool:
      return PoolMethod::kAvePool;
    case EvalMethod::kOracle:
      return PoolMethod::kOracle;
    default:
      return PoolMethod::kQan;
  }
}

// Pooled vectors are computed once per set; min-pair methods use the raw
// per-sample embeddings.
class Comparator {
 public:
  Comparator(const std::vector<SetFeatures>& sets, EvalMethod method)
      : sets_(sets), method_(method) {
    if (is_pooled(method)) {
      for (const SetFeatures& f : sets) pooled_.push_back(pool(pool_method(method), f).vector);
    }
  }

  double operator()(std::size_t i, const Comparator& other, std::size_t j) const {
    switch (method_) {
      case EvalMethod::kMinCos:
        return min_pair_distance(SetMetric::kMinCos, sets_[i].R, other.sets_[j].R);
      case EvalMethod::kMinL2:
        return min_pair_distance(SetMetric::kMinL2, sets_[i].R, other.sets_[j].R);
      default:
        return pooled_distance(SetMetric::kPooledL2, pooled_[i], other.pooled_[j]);
    }
  }

 private:
  const std::vector<SetFeatures>& sets_;
  EvalMethod method_;
  std::vector<Vector> pooled_;
};

}  // namespace

double set_distance(EvalMethod method, const SetFeatures& a, const SetFeatures& b) {
  std::vector<SetFeatures> left{a}, right{b};
  return Comparator(left, method)(0, Comparator(right, method), 0);
}

double CmcTable::at(std::size_t k) const {
  if (curve.empty() || k == 0) return 0.0;
  return curve[std::min(k, curve.size()) - 1];
}

std::vector<std::size_t> match_ranks(const DistanceMatrix& dist,
                                     std::span<const std::size_t> true_index) {
  if (dist.size() != true_index.size()) throw Error("cmc: one true match per probe required");
  std::vector<std::size_t> ranks;
  ranks.reserve(dist.size());
  for (std::size_t p = 0; p < dist.size(); ++p) {
    const Vector& row = dist[p];
    const std::size_t t = true_index[p];
    if (t >= row.size()) throw Error("cmc: true match index out of range");
    std::size_t rank = 1;
    for (std::size_t g = 0; g < row.size(); ++g) {
      if (row[g] < row[t] || (row[g] == row[t] && g < t)) ++rank;
    }
    ranks.push_back(rank);
  }
  return ranks;
}

CmcTable cmc_from_distances(const DistanceMatrix& dist,
                            std::span<const std::size_t> true_index) {
  if (dist.empty()) throw Error("cmc: no probes");
  const std::size_t gallery = dist.front().size();
  for (const Vector& row : dist) {
    if (row.size() != gallery) throw Error("cmc: ragged distance matrix");
  }
  std::vector<std::size_t> ranks = match_ranks(dist, true_index);
  std::vector<std::size_t> hits(gallery + 1, 0);
  for (std::size_t r : ranks) ++hits[r];
  CmcTable t;
  t.curve.resize(gallery);
  std::size_t cumulative = 0;
  for (std::size_t k = 1; k <= gallery; ++k) {
    cumulative += hits[k];
    t.curve[k - 1] = static_cast<double>(cumulative) / static_cast<double>(ranks.size());
  }
  return t;
}

CmcTable cmc(const std::vector<SetFeatures>& probes, const std::vector<SetFeatures>& gallery,
             EvalMethod method) {
  std::map<IdentityId, std::size_t> where;
  std::vector<IdentityId> duplicated;
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    if (!where.emplace(gallery[g].identity, g).second) duplicated.push_back(gallery[g].identity);
  }
  if (!duplicated.empty()) {
    std::string ids;
    for (IdentityId id : duplicated) ids += " " + std::to_string(id);
    throw Error("cmc: gallery holds more than one set for identities" + ids);
  }
  std::vector<std::size_t> truth;
  std::string missing;
  for (const SetFeatures& p : probes) {
    auto it = where.find(p.identity);
    if (it == where.end()) {
      missing += " " + std::to_string(p.identity);
    } else {
      truth.push_back(it->second);
    }
  }
  if (!missing.empty()) throw Error("cmc: probe identities absent from gallery:" + missing);

  Comparator left(probes, method), right(gallery, method);
  DistanceMatrix dist(probes.size(), Vector(gallery.size()));
  for (std::size_t p = 0; p < probes.size(); ++p) {
    for (std::size_t g = 0; g < gallery.size(); ++g) dist[p][g] = left(p, right, g);
  }
  return cmc_from_distances(dist, truth);
}

RocReport roc_from_scores(std::span<const double> scores, const std::vector<bool>& same) {
  if (scores.size() != same.size()) throw Error("roc: scores and labels differ in length");
  const std::size_t n_pos = static_cast<std::size_t>(std::count(same.begin(), same.end(), true));
  const std::size_t n_neg = same.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw Error("roc: need at least one positive and one negative pair");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error("roc: non-finite score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocReport r;
  r.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  std::size_t best_correct = n_neg;  // threshold above every score
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (same[order[i]] ? tp : fp) += 1;
      ++i;
    }
    r.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                        static_cast<double>(tp) / static_cast<double>(n_pos)});
    best_correct = std::max(best_correct, tp + (n_neg - fp));
  }
  double auc = 0.0;
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    const RocPoint& a = r.points[i - 1];
    const RocPoint& b = r.points[i];
    auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  r.auc = auc;
  r.accuracy = static_cast<double>(best_correct) / static_cast<double>(same.size());
  for (std::size_t t = 0; t < RocReport::kTargets.size(); ++t) {
    double best = 0.0;
    for (const RocPoint& p : r.points) {
      if (p.fpr <= RocReport::kTargets[t]) best = std::max(best, p.tpr);
    }
    r.tpr_at[t] = best;
  }
  return r;
}

std::vector<SetPair> make_verification_pairs(const std::vector<SetFeatures>& sets, Rng& rng) {
  std::vector<SetPair> pairs;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      if (sets[i].identity == sets[j].identity) pairs.push_back({i, j, true});
    }
  }
  const std::size_t n_pos = pairs.size();
  std::set<IdentityId> ids;
  for (const SetFeatures& f : sets) ids.insert(f.identity);
  if (n_pos == 0 || ids.size() < 2) {
    throw Error("verification pairs need an identity with two sets and at least two identities");
  }
  for (std::size_t k = 0; k < n_pos; ++k) {
    std::size_t a, b;
    do {
      a = rng.below(sets.size());
      b = rng.below(sets.size());
    } while (sets[a].identity == sets[b].identity);
    pairs.push_back({std::min(a, b), std::max(a, b), false});
  }
  return pairs;
}

RocReport roc(const std::vector<SetFeatures>& sets, const std::vector<SetPair>& pairs,
              EvalMethod method) {
  Comparator cmp(sets, method);
  Vector scores;
  std::vector<bool> same;
  for (const SetPair& p : pairs) {
    scores.push_back(-cmp(p.a, cmp, p.b));
    same.push_back(p.same);
  }
  return roc_from_scores(scores, same);
}

namespace {

Vector average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vector ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("spearman: need two equal-length series");
  const Vector ra = average_ranks(a);
  const Vector rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double pairwise_agreement(std::span<const double> scores, std::span<const double> truth) {
  if (scores.size() != truth.size()) throw Error("pairwise agreement: length mismatch");
  std::size_t counted = 0, agree = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = i + 1; j < scores.size(); ++j) {
      if (truth[i] == truth[j]) continue;
      ++counted;
      const bool truth_says_i = truth[i] > truth[j];
      if ((truth_says_i && scores[i] > scores[j]) || (!truth_says_i && scores[j] > scores[i])) {
        ++agree;
      }
    }
  }
  if (counted == 0) throw Error("pairwise agreement: no pairs with distinct ground truth");
  return static_cast<double>(agree) / static_cast<double>(counted);
}

AgreementReport agreement_from_scores(std::span<const double> scores,
                                      std::span<const double> truth) {
  std::set<double> distinct(truth.begin(), truth.end());
  if (distinct.size() < 2) throw Error("quality agreement: fewer than two distinct q_true values");
  AgreementReport r;
  r.spearman_rho = spearman(scores, truth);
  r.pairwise_agreement = pairwise_agreement(scores, truth);
  std::vector<CompensatedSum> sums(10);
  r.deciles.resize(10);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::size_t bin = std::min<std::size_t>(9, static_cast<std::size_t>(truth[i] * 10.0));
    sums[bin].add(scores[i]);
    ++r.deciles[bin].count;
  }
  for (std::size_t b = 0; b < 10; ++b) {
    r.deciles[b].bin = b;
    if (r.deciles[b].count) {
      r.deciles[b].mean_mu_raw = sums[b].value() / static_cast<double>(r.deciles[b].count);
    }
  }
  return r;
}

AgreementReport quality_agreement(const QanModel& model, const Dataset& d) {
  Vector scores, truth;
  for (const ImageSet& set : d.sets) {
    for (const Sample& s : set.samples) {
      scores.push_back(forward_sample(model, s.x).mu_raw());
      truth.push_back(s.q_true);
    }
  }
  return agreement_from_scores(scores, truth);
}

const MethodReport& EvalReport::get(EvalMethod m) const {
  for (const MethodReport& r : methods) {
    if (r.method == m) return r;
  }
  throw Error("report has no rows for method '" + std::string(to_string(m)) + "'");
}

std::string EvalReport::cmc_csv() const {
  std::string out = "method,rank,rate\n";
  for (const MethodReport& m : methods) {
    for (std::size_t k : CmcTable::kReportRanks) {
      out += std::string(to_string(m.method)) + "," + std::to_string(k) + "," +
             format_double(m.cmc.at(k)) + "\n";
    }
  }
  return out;
}

std::string EvalReport::roc_csv() const {
  std::string out = "method,auc,accuracy,tpr@1e-3,tpr@1e-2,tpr@1e-1\n";
  for (const MethodReport& m : methods) {
    out += std::string(to_string(m.method)) + "," + format_double(m.roc.auc) + "," +
           format_double(m.roc.accuracy);
    for (double t : m.roc.tpr_at) out += "," + format_double(t);
    out += "\n";
  }
  return out;
}

std::string EvalReport::agreement_csv() const {
  return "spearman,pair_agreement\n" + format_double(agreement.spearman_rho) + "," +
         format_double(agreement.pairwise_agreement) + "\n";
}

std::string EvalReport::deciles_csv() const {
  std::string out = "bin,q_lo,q_hi,count,mean_mu_raw\n";
  for (const DecileRow& r : agreement.deciles) {
    out += std::to_string(r.bin) + "," + format_double(r.bin / 10.0) + "," +
           format_double((r.bin + 1) / 10.0) + "," + std::to_string(r.count) + "," +
           format_double(r.mean_mu_raw) + "\n";
  }
  return out;
}

std::string EvalReport::table() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "method    CMC@1   CMC@5   CMC@10  CMC@20  AUC     acc     TPR@1e-3 TPR@1e-2 TPR@1e-1\n";
  for (const MethodReport& m : methods) {
    std::string name(to_string(m.method));
    name.resize(9, ' ');
    out << name << " ";
    for (std::size_t k : CmcTable::kReportRanks) out << m.cmc.at(k) << "  ";
    out << m.roc.auc << "  " << m.roc.accuracy << "  ";
    for (double t : m.roc.tpr_at) out << t << "   ";
    out << "\n";
  }
  out << "\nquality agreement: spearman " << agreement.spearman_rho << ", pairwise "
      << agreement.pairwise_agreement << "\n";
  out << "q_true bin   count  mean mu_raw\n";
  for (const DecileRow& r : agreement.deciles) {
    out << "[" << r.bin / 10.0 << "," << (r.bin + 1) / 10.0 << (r.bin == 9 ? "]  " : ")  ")
        << r.count << "  "
        << r.mean_mu_raw << "\n";
  }
  return out.str();
}

void split_probe_gallery(const std::vector<SetFeatures>& sets, std::vector<SetFeatures>& probes,
                         std::vector<SetFeatures>& gallery) {
  std::map<IdentityId, std::vector<std::size_t>> by_id;
  std::vector<IdentityId> order;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    auto& v = by_id[sets[i].identity];
    if (v.empty()) order.push_back(sets[i].identity);
    v.push_back(i);
  }
  for (IdentityId id : order) {
    const auto& v = by_id[id];
    if (v.size() < 2) continue;
    probes.push_back(sets[v[0]]);
    gallery.push_back(sets[v[1]]);
  }
}

EvalReport evaluate(const QanModel& model, const Dataset& d,
                    const std::vector<EvalMethod>& methods, std::uint64_t pair_seed) {
  if (d.d_in != model.config().d_in) {
    throw Error("dataset d_in " + std::to_string(d.d_in) + " does not match checkpoint d_in " +
                std::to_string(model.config().d_in));
  }
  std::vector<SetFeatures> sets;
  sets.reserve(d.sets.size());
  for (const ImageSet& s : d.sets) sets.push_back(extract_features(model, s));
  std::vector<SetFeatures> probes, gallery;
  split_probe_gallery(sets, probes, gallery);
  if (probes.empty()) throw Error("evaluation needs identities with at least two sets");
  Rng rng(pair_seed);
  const std::vector<SetPair> pairs = make_verification_pairs(sets, rng);

  EvalReport report;
  for (EvalMethod m : methods) {
    report.methods.push_back({m, cmc(probes, gallery, m), roc(sets, pairs, m)});
  }
  Vector scores, truth;
  for (const SetFeatures& f : sets) {
    scores.insert(scores.end(), f.mu_raw.begin(), f.mu_raw.end());
    truth.insert(truth.end(), f.q_true.begin(), f.q_true.end());
  }
  report.agreement = agreement_from_scores(scores, truth);
  return report;
}

}  // namespace qan

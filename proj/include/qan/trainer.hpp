#ifndef QAN_TRAINER_HPP_
#define QAN_TRAINER_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qan/dataset.hpp"
#include "qan/losses.hpp"
#include "qan/model.hpp"
#include "qan/rng.hpp"

namespace qan {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t triplets_per_epoch = 200;
  double lr = 0.01;
  double pretrain_lr = 0.05;
  double lr_decay = 0.95;
  double momentum = 0.9;
  std::size_t pretrain_epochs = 0;
  std::uint64_t seed = 0;
  bool hinge = true;
  // Per-epoch checkpoints are written here when non-empty.
  std::string checkpoint_dir;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double l_veri = 0.0;
  double l_class = 0.0;
  double active_frac = 0.0;
  double mu_clean = 0.0;    // mean normalized quality, q_true == 1
  double mu_corrupt = 0.0;  // mean normalized quality, q_true < 1
};

struct PretrainRecord {
  std::size_t epoch = 0;
  double l_class = 0.0;
};

struct TrainLog {
  std::vector<PretrainRecord> pretrain;
  std::vector<EpochRecord> records;

  /// `epoch,l_veri,l_class,active_frac,mu_clean,mu_corrupt`
  std::string to_csv() const;
  std::string pretrain_csv() const;
};

/// Dense class index per identity, in ascending identity order.
class LabelMap {
 public:
  explicit LabelMap(const Dataset& d);
  std::size_t operator()(IdentityId id) const;
  std::size_t size() const { return index_.size(); }

 private:
  std::map<IdentityId, std::size_t> index_;
};

struct TripletIndices {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

/// Uniform triplet sampling: an anchor identity with at least two sets is
/// drawn uniformly, then two distinct sets of it, then a uniformly random set
/// of any other identity.
class TripletSampler {
 public:
  explicit TripletSampler(const Dataset& d);
  TripletIndices sample(Rng& rng) const;

 private:
  std::vector<std::vector<std::size_t>> anchor_sets_;  // per eligible identity
  std::vector<IdentityId> anchor_ids_;
  std::vector<std::pair<IdentityId, std::size_t>> all_sets_;
};

TripletIndices sample_triplet(const Dataset& d, Rng& rng);

/// Forward and backward for one triplet of sets, accumulating every
/// parameter gradient of l_veri + lambda * mean(l_class). No update.
LossValue accumulate_triplet(QanModel& model, const ImageSet& anchor,
                             const ImageSet& positive, const ImageSet& negative,
                             const LabelMap& labels, bool hinge = true);

/// The same objective, forward only.
double triplet_objective(const QanModel& model, const ImageSet& anchor,
                         const ImageSet& positive, const ImageSet& negative,
                         const LabelMap& labels, bool hinge = true);

/// accumulate_triplet followed by one SGD step over all parameters.
LossValue train_step(QanModel& model, const ImageSet& anchor, const ImageSet& positive,
                     const ImageSet& negative, const LabelMap& labels, double lr,
                     double momentum, bool hinge = true);

/// One pass of per-sample softmax training in shuffled order. The quality
/// head is not updated. Returns the mean loss seen during the pass.
PretrainRecord pretrain_epoch(QanModel& model, const Dataset& d, const LabelMap& labels,
                              double lr, double momentum, Rng& rng);

/// Mean normalized quality over clean and corrupted samples.
std::pair<double, double> mean_quality_split(const QanModel& model, const Dataset& d);

TrainLog train(QanModel& model, const Dataset& d, const TrainConfig& cfg);

std::string checkpoint_name(std::size_t epoch);

}  // namespace qan

#endif  // QAN_TRAINER_HPP_

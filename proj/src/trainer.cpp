#include "qan/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "qan/error.hpp"
#include "qan/textio.hpp"

namespace qan {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error("train config: lr must be > 0");
  if (!(pretrain_lr >= 0.0)) throw Error("train config: pretrain lr must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error("train config: lr_decay must lie in (0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("train config: momentum must lie in [0, 1)");
}

std::string TrainLog::to_csv() const {
  std::string out = "epoch,l_veri,l_class,active_frac,mu_clean,mu_corrupt\n";
  for (const EpochRecord& r : records) {
    out += std::to_string(r.epoch) + "," + format_double(r.l_veri) + "," +
           format_double(r.l_class) + "," + format_double(r.active_frac) + "," +
           format_double(r.mu_clean) + "," + format_double(r.mu_corrupt) + "\n";
  }
  return out;
}

std::string TrainLog::pretrain_csv() const {
  std::string out = "epoch,l_class\n";
  for (const PretrainRecord& r : pretrain) {
    out += std::to_string(r.epoch) + "," + format_double(r.l_class) + "\n";
  }
  return out;
}

LabelMap::LabelMap(const Dataset& d) {
  for (IdentityId id : d.identities()) index_.emplace(id, index_.size());
}

std::size_t LabelMap::operator()(IdentityId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error("no class label for identity " + std::to_string(id));
  return it->second;
}

TripletSampler::TripletSampler(const Dataset& d) {
  std::map<IdentityId, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < d.sets.size(); ++i) {
    by_id[d.sets[i].identity].push_back(i);
    all_sets_.emplace_back(d.sets[i].identity, i);
  }
  for (auto& [id, sets] : by_id) {
    if (sets.size() >= 2) {
      anchor_ids_.push_back(id);
      anchor_sets_.push_back(sets);
    }
  }
  if (anchor_ids_.empty()) throw Error("cannot form a triplet: no identity has two sets");
  if (by_id.size() < 2) throw Error("cannot form a triplet: need at least two identities");
}

TripletIndices TripletSampler::sample(Rng& rng) const {
  const std::size_t k = rng.below(anchor_ids_.size());
  const auto& sets = anchor_sets_[k];
  const IdentityId id = anchor_ids_[k];
  TripletIndices t;
  const std::size_t a = rng.below(sets.size());
  std::size_t p = rng.below(sets.size() - 1);
  if (p >= a) ++p;
  t.anchor = sets[a];
  t.positive = sets[p];
  const std::size_t others = all_sets_.size() - sets.size();
  std::size_t pick = rng.below(others);
  for (const auto& [set_id, idx] : all_sets_) {
    if (set_id == id) continue;
    if (pick-- == 0) {
      t.negative = idx;
      break;
    }
  }
  return t;
}

TripletIndices sample_triplet(const Dataset& d, Rng& rng) {
  return TripletSampler(d).sample(rng);
}

namespace {

std::size_t image_count(const ImageSet& a, const ImageSet& p, const ImageSet& n) {
  return a.size() + p.size() + n.size();
}

}  // namespace

LossValue accumulate_triplet(QanModel& model, const ImageSet& anchor,
                             const ImageSet& positive, const ImageSet& negative,
                             const LabelMap& labels, bool hinge) {
  const QanConfig& cfg = model.config();
  const ImageSet* sets[3] = {&anchor, &positive, &negative};
  SetEmbedding emb[3] = {embed_set(model, anchor), embed_set(model, positive),
                         embed_set(model, negative)};
  TripletResult trip = triplet_loss(emb[0].Ra, emb[1].Ra, emb[2].Ra, cfg.margin, hinge);

  const double scale =
      cfg.lambda_class / static_cast<double>(image_count(anchor, positive, negative));
  std::vector<double> class_losses;
  std::vector<Vector> class_grads[3];
  for (int s = 0; s < 3; ++s) {
    const std::size_t label = labels(sets[s]->identity);
    for (const Vector& R : emb[s].R) {
      SoftmaxResult sm = softmax_xent(model.classifier, R, label, scale);
      class_losses.push_back(sm.loss);
      class_grads[s].push_back(std::move(sm.grad_input));
    }
  }
  LossValue value = combine_losses(trip.loss, class_losses, cfg.lambda_class);
  value.active = trip.active;
  if (!std::isfinite(value.total)) {
    throw Error("non-finite loss (l_veri " + format_double(value.l_veri) + ", l_class " +
                format_double(value.l_class) + ")");
  }
  const Vector* g[3] = {&trip.grad_anchor, &trip.grad_positive, &trip.grad_negative};
  for (int s = 0; s < 3; ++s) backward_set(model, emb[s], *g[s], class_grads[s]);
  return value;
}

double triplet_objective(const QanModel& model, const ImageSet& anchor,
                         const ImageSet& positive, const ImageSet& negative,
                         const LabelMap& labels, bool hinge) {
  const QanConfig& cfg = model.config();
  const ImageSet* sets[3] = {&anchor, &positive, &negative};
  SetEmbedding emb[3] = {embed_set(model, anchor), embed_set(model, positive),
                         embed_set(model, negative)};
  TripletResult trip = triplet_loss(emb[0].Ra, emb[1].Ra, emb[2].Ra, cfg.margin, hinge);
  std::vector<double> class_losses;
  for (int s = 0; s < 3; ++s) {
    const std::size_t label = labels(sets[s]->identity);
    for (const Vector& R : emb[s].R) {
      class_losses.push_back(softmax_loss(model.classifier, R, label));
    }
  }
  return combine_losses(trip.loss, class_losses, cfg.lambda_class).total;
}

LossValue train_step(QanModel& model, const ImageSet& anchor, const ImageSet& positive,
                     const ImageSet& negative, const LabelMap& labels, double lr,
                     double momentum, bool hinge) {
  LossValue v;
  try {
    v = accumulate_triplet(model, anchor, positive, negative, labels, hinge);
  } catch (...) {
    zero_grads(model.params());
    throw;
  }
  model.step(model.params(), lr, momentum);
  return v;
}

PretrainRecord pretrain_epoch(QanModel& model, const Dataset& d, const LabelMap& labels,
                              double lr, double momentum, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> order;
  for (std::size_t s = 0; s < d.sets.size(); ++s) {
    for (std::size_t k = 0; k < d.sets[s].size(); ++k) order.emplace_back(s, k);
  }
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  ParamStore params = model.trunk_params();
  for (Parameter* p : model.feature_params()) params.push_back(p);
  for (Parameter* p : model.classifier_params()) params.push_back(p);

  CompensatedSum total;
  for (const auto& [s, k] : order) {
    const Sample& sample = d.sets[s].samples[k];
    SampleForward fwd = forward_sample(model, sample.x);
    SoftmaxResult sm = softmax_xent(model.classifier, fwd.embedding(), labels(sample.identity));
    if (!std::isfinite(sm.loss)) throw Error("non-finite softmax loss during pretraining");
    backward_feature(model, fwd, sm.grad_input);
    model.step(params, lr, momentum);
    total.add(sm.loss);
  }
  PretrainRecord r;
  r.l_class = order.empty() ? 0.0 : total.value() / static_cast<double>(order.size());
  return r;
}

std::pair<double, double> mean_quality_split(const QanModel& model, const Dataset& d) {
  CompensatedSum clean, corrupt;
  std::size_t n_clean = 0, n_corrupt = 0;
  for (const ImageSet& set : d.sets) {
    SetEmbedding emb = embed_set(model, set);
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set.samples[i].q_true < 1.0) {
        corrupt.add(emb.mu[i]);
        ++n_corrupt;
      } else {
        clean.add(emb.mu[i]);
        ++n_clean;
      }
    }
  }
  return {n_clean ? clean.value() / static_cast<double>(n_clean) : 0.0,
          n_corrupt ? corrupt.value() / static_cast<double>(n_corrupt) : 0.0};
}

std::string checkpoint_name(std::size_t epoch) {
  return "ckpt_" + std::to_string(epoch) + ".qanmodel";
}

namespace {

void reset_velocity(const ParamStore& params) {
  for (Parameter* p : params) std::fill(p->velocity.begin(), p->velocity.end(), 0.0);
}

void write_checkpoint(const QanModel& model, const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  save_checkpoint(model, (std::filesystem::path(cfg.checkpoint_dir) / checkpoint_name(epoch)).string());
}

}  // namespace

TrainLog train(QanModel& model, const Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  TrainLog log;
  if (cfg.epochs == 0 && cfg.pretrain_epochs == 0) {
    write_checkpoint(model, cfg, 0);
    return log;
  }
  const LabelMap labels(d);
  if (labels.size() != model.config().n_classes) {
    throw Error("training data has " + std::to_string(labels.size()) +
                " identities but the classifier has " +
                std::to_string(model.config().n_classes) + " classes");
  }
  Rng rng(cfg.seed);

  double lr = cfg.pretrain_lr;
  for (std::size_t e = 0; e < cfg.pretrain_epochs; ++e) {
    PretrainRecord r = pretrain_epoch(model, d, labels, lr, cfg.momentum, rng);
    r.epoch = e + 1;
    log.pretrain.push_back(r);
    lr *= cfg.lr_decay;
  }
  reset_velocity(model.params());
  write_checkpoint(model, cfg, 0);
  if (cfg.epochs == 0) return log;

  const TripletSampler sampler(d);
  lr = cfg.lr;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    CompensatedSum veri, cls;
    std::size_t active = 0;
    for (std::size_t t = 0; t < cfg.triplets_per_epoch; ++t) {
      const TripletIndices idx = sampler.sample(rng);
      LossValue v = train_step(model, d.sets[idx.anchor], d.sets[idx.positive],
                               d.sets[idx.negative], labels, lr, cfg.momentum, cfg.hinge);
      veri.add(v.l_veri);
      cls.add(v.l_class);
      active += v.active ? 1 : 0;
    }
    EpochRecord rec;
    rec.epoch = e;
    const double n = static_cast<double>(std::max<std::size_t>(cfg.triplets_per_epoch, 1));
    rec.l_veri = veri.value() / n;
    rec.l_class = cls.value() / n;
    rec.active_frac = static_cast<double>(active) / n;
    std::tie(rec.mu_clean, rec.mu_corrupt) = mean_quality_split(model, d);
    log.records.push_back(rec);
    write_checkpoint(model, cfg, e);
    lr *= cfg.lr_decay;
  }
  return log;
}

}  // namespace qan

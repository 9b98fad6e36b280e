#ifndef QAN_MODEL_HPP_
#define QAN_MODEL_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qan/netcore.hpp"
#include "qan/rng.hpp"
#include "qan/sample.hpp"

namespace qan {

struct QanConfig {
  std::size_t d_in = 5;
  std::vector<std::size_t> trunk_dims = {64, 64};
  // 1-based trunk layer whose output feeds the quality branch.
  std::size_t split_index = 1;
  std::size_t d_embed = 8;
  // Width of the quality head's hidden relu layer; 0 means a single
  // sigmoid unit reading the middle representation directly.
  std::size_t quality_hidden = 16;
  std::size_t n_classes = 100;
  double margin = 1.0;
  double lambda_class = 0.1;
  // Project each per-sample embedding onto the unit sphere after the
  // feature head. Without it the embedding scale grows until every triplet
  // clears the margin.
  bool normalize_embedding = true;

  /// Throws Error naming the first violated constraint.
  void validate() const;
};

// Middle trunk layer, 1-based.
std::size_t default_split_index(std::size_t trunk_layers);

/// Two-branch set embedding network. The trunk (relu) produces a middle
/// representation at split_index; the quality head reads it and ends in a
/// scalar sigmoid, the feature head reads the full trunk output and ends in
/// an identity layer of width d_embed. The classifier sits on top of the
/// per-sample embedding.
class QanModel {
 public:
  QanModel(const QanConfig& config, std::uint64_t seed);

  const QanConfig& config() const { return config_; }

  std::vector<DenseLayer> trunk;
  std::vector<DenseLayer> feature_head;
  std::vector<DenseLayer> quality_head;
  DenseLayer classifier;

  ParamStore params();
  std::vector<const Parameter*> params() const;
  ParamStore trunk_params();
  ParamStore feature_params();
  ParamStore quality_params();
  ParamStore classifier_params();

  // Bumped whenever parameters change through step(); embeddings remember the
  // generation they were computed at so backward can reject stale caches.
  std::uint64_t generation() const { return generation_; }
  void mark_modified() { ++generation_; }

  /// sgd_step over the given parameters, then bumps the generation.
  void step(const ParamStore& params, double lr, double momentum);

 private:
  QanConfig config_;
  std::uint64_t generation_ = 0;
};

struct SampleForward {
  std::vector<DenseCache> trunk;
  std::vector<DenseCache> feature;
  std::vector<DenseCache> quality;

  const Vector& middle(std::size_t split_index) const {
    return trunk[split_index - 1].output;
  }
  // Feature-head output before the optional unit-norm projection.
  const Vector& feature_output() const { return feature.back().output; }
  const Vector& embedding() const { return normalized ? R : feature.back().output; }

  bool normalized = false;
  Vector R;              // unit-norm embedding when normalized (zero if f is zero)
  double feature_norm = 0.0;
  double mu_raw() const { return quality.back().output[0]; }
};

SampleForward forward_sample(const QanModel& model, std::span<const double> x);

/// Group L1 normalization: mu_i = r_i / sum_j r_j. Requires every r_i > 0.
Vector normalize_qualities(std::span<const double> mu_raw);

/// Backward of normalize_qualities: maps dL/dmu to dL/dmu_raw.
Vector normalize_qualities_backward(std::span<const double> mu_raw,
                                    std::span<const double> mu,
                                    std::span<const double> dmu);

/// Ra = sum_i mu_i R_i with mu already summing to one. Summation runs in
/// ascending sample order with compensation.
Vector set_pool_forward(const std::vector<Vector>& R, std::span<const double> mu);

struct PoolGradients {
  std::vector<Vector> dR;  // dR_i = mu_i * g
  Vector dmu;              // dmu_i = <g, R_i - Ra>
};

PoolGradients set_pool_backward(const std::vector<Vector>& R,
                                std::span<const double> mu,
                                std::span<const double> Ra,
                                std::span<const double> g);

struct SetEmbedding {
  std::vector<SampleForward> samples;
  std::vector<Vector> R;
  Vector mu_raw;
  Vector mu;
  Vector Ra;
  std::uint64_t generation = 0;

  std::size_t size() const { return R.size(); }
};

SetEmbedding embed_set(const QanModel& model, const ImageSet& set);

/// Accumulates parameter gradients for dL/dRa = g. class_grads, when
/// non-empty, holds one dL/dR_i per sample from the classification branch;
/// it is added to the pooled feature gradient and never reaches the quality
/// head.
void backward_set(QanModel& model, const SetEmbedding& emb,
                  std::span<const double> g,
                  std::span<const Vector> class_grads = {});

/// Backward for a single sample through the feature branch only (feature
/// head then the full trunk). Used by classification pretraining.
void backward_feature(QanModel& model, const SampleForward& fwd,
                      std::span<const double> dR);

void save_checkpoint(const QanModel& model, const std::string& path);
std::string serialize_checkpoint(const QanModel& model);
QanModel load_checkpoint(const std::string& path);

}  // namespace qan

#endif  // QAN_MODEL_HPP_

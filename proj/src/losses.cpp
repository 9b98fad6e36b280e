#include "qan/losses.hpp"

#include <algorithm>
#include <cmath>

#include "qan/error.hpp"

namespace qan {

TripletResult triplet_loss(std::span<const double> anchor,
                           std::span<const double> positive,
                           std::span<const double> negative, double margin,
                           bool hinge) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw Error("triplet_loss: embeddings have sizes " + std::to_string(anchor.size()) +
                ", " + std::to_string(positive.size()) + ", " +
                std::to_string(negative.size()));
  }
  if (!(margin > 0.0)) throw Error("triplet_loss: margin must be > 0");
  const std::size_t d = anchor.size();
  double d_ap = 0.0;
  double d_an = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double ap = anchor[j] - positive[j];
    const double an = anchor[j] - negative[j];
    d_ap += ap * ap;
    d_an += an * an;
  }
  TripletResult r;
  r.raw = d_ap - d_an + margin;
  r.active = !hinge || r.raw > 0.0;
  r.loss = hinge ? std::max(0.0, r.raw) : r.raw;
  r.grad_anchor.assign(d, 0.0);
  r.grad_positive.assign(d, 0.0);
  r.grad_negative.assign(d, 0.0);
  if (!r.active) return r;
  for (std::size_t j = 0; j < d; ++j) {
    r.grad_anchor[j] = 2.0 * (negative[j] - positive[j]);
    r.grad_positive[j] = -2.0 * (anchor[j] - positive[j]);
    r.grad_negative[j] = 2.0 * (anchor[j] - negative[j]);
  }
  return r;
}

namespace {

void check_label(const DenseLayer& classifier, std::size_t label) {
  if (label >= classifier.out_size()) {
    throw Error("softmax: label " + std::to_string(label) + " outside [0, " +
                std::to_string(classifier.out_size()) + ")");
  }
}

// Returns log-sum-exp and fills probs.
double softmax(std::span<const double> logits, Vector& probs) {
  const double m = *std::max_element(logits.begin(), logits.end());
  probs.resize(logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    probs[k] = std::exp(logits[k] - m);
    z += probs[k];
  }
  for (double& p : probs) p /= z;
  return m + std::log(z);
}

}  // namespace

double softmax_loss(const DenseLayer& classifier, std::span<const double> x,
                    std::size_t label) {
  check_label(classifier, label);
  DenseCache cache = dense_forward(classifier, x);
  Vector probs;
  const double lse = softmax(cache.output, probs);
  return lse - cache.output[label];
}

SoftmaxResult softmax_xent(DenseLayer& classifier, std::span<const double> x,
                           std::size_t label, double grad_scale) {
  check_label(classifier, label);
  DenseCache cache = dense_forward(classifier, x);
  SoftmaxResult r;
  const double lse = softmax(cache.output, r.probs);
  r.loss = lse - cache.output[label];
  r.grad_logits = r.probs;
  r.grad_logits[label] -= 1.0;
  Vector scaled = r.grad_logits;
  for (double& v : scaled) v *= grad_scale;
  r.grad_input = dense_backward(classifier, cache, scaled);
  return r;
}

LossValue combine_losses(double l_veri, std::span<const double> class_losses,
                         double lambda_class) {
  if (!(lambda_class >= 0.0)) throw Error("combine_losses: lambda_class must be >= 0");
  LossValue v;
  v.l_veri = l_veri;
  if (!class_losses.empty()) {
    CompensatedSum s;
    for (double l : class_losses) s.add(l);
    v.l_class = s.value() / static_cast<double>(class_losses.size());
  }
  v.total = l_veri + lambda_class * v.l_class;
  return v;
}

}  // namespace qan

#ifndef QAN_LOSSES_HPP_
#define QAN_LOSSES_HPP_

#include <span>

#include "qan/netcore.hpp"
#include "qan/sample.hpp"

namespace qan {

struct TripletResult {
  double raw = 0.0;   // ||a-p||^2 - ||a-n||^2 + margin
  double loss = 0.0;  // max(0, raw), or raw when the hinge is disabled
  bool active = false;
  Vector grad_anchor;
  Vector grad_positive;
  Vector grad_negative;
};

/// Squared-euclidean triplet loss on pooled set embeddings. With hinge=false
/// the printed unhinged form is used (diagnostics only; unbounded below).
TripletResult triplet_loss(std::span<const double> anchor,
                           std::span<const double> positive,
                           std::span<const double> negative, double margin,
                           bool hinge = true);

struct SoftmaxResult {
  double loss = 0.0;
  Vector probs;
  Vector grad_logits;
  Vector grad_input;
};

/// Cross-entropy of softmax(classifier * x) against label. Forward only;
/// no gradient buffers are touched.
double softmax_loss(const DenseLayer& classifier, std::span<const double> x,
                    std::size_t label);

/// Cross-entropy with gradients. The classifier gradient, scaled by
/// grad_scale, is accumulated; grad_input is likewise scaled.
SoftmaxResult softmax_xent(DenseLayer& classifier, std::span<const double> x,
                           std::size_t label, double grad_scale = 1.0);

struct LossValue {
  double l_veri = 0.0;
  double l_class = 0.0;  // mean over images
  double total = 0.0;
  bool active = false;
};

LossValue combine_losses(double l_veri, std::span<const double> class_losses,
                         double lambda_class);

}  // namespace qan

#endif  // QAN_LOSSES_HPP_

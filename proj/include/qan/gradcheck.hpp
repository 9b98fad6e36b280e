#ifndef QAN_GRADCHECK_HPP_
#define QAN_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qan/dataset.hpp"
#include "qan/model.hpp"
#include "qan/trainer.hpp"

namespace qan {

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h. Never calls any
/// backward routine.
Vector numeric_grad(const std::function<double(std::span<const double>)>& f,
                    std::span<const double> p, double h = 1e-5);

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

struct BlockReport {
  std::string name;
  std::size_t size = 0;
  double max_rel = 0.0;
  double median_rel = 0.0;
  double max_abs = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  static constexpr double kMaxRelTolerance = 1e-4;
  static constexpr double kMedianRelTolerance = 1e-6;

  std::vector<BlockReport> blocks;
  bool vacuous = false;  // every analytic gradient is exactly zero
  bool pass = false;

  std::string table() const;
};

struct TripletInstance {
  QanModel model;
  Dataset data;  // holds exactly the three sets, anchor first
  bool hinge = true;
};

/// Compares the analytic gradient of the total triplet objective against
/// numeric_grad for every parameter block of the model.
GradCheckReport check_model(const QanModel& model, const ImageSet& anchor,
                            const ImageSet& positive, const ImageSet& negative,
                            const LabelMap& labels, bool hinge = true, double h = 1e-5);
GradCheckReport check_model(const TripletInstance& inst, double h = 1e-5);

/// Default tiny configuration for gradient sweeps (a few hundred parameters).
QanConfig tiny_config();

/// Seeded random instance whose relu pre-activations and hinge sit at least
/// `kink_clearance` away from their kinks, so central differences with the
/// default step never straddle a non-differentiable point.
TripletInstance make_tiny_instance(std::uint64_t seed, const QanConfig& cfg = tiny_config(),
                                   std::size_t set_size = 3, double kink_clearance = 1e-3);

}  // namespace qan

#endif  // QAN_GRADCHECK_HPP_

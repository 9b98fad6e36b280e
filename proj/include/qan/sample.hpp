#ifndef QAN_SAMPLE_HPP_
#define QAN_SAMPLE_HPP_

#include <cstdint>
#include <vector>

#include "qan/netcore.hpp"

namespace qan {

using IdentityId = std::int64_t;
using SetId = std::int64_t;

/// One input vector. q_true is the ground-truth quality (1 = clean) and is
/// never seen by any loss; it exists for evaluation only.
struct Sample {
  Vector x;
  IdentityId identity = 0;
  double q_true = 1.0;
};

/// Ordered samples of a single identity.
struct ImageSet {
  SetId set_id = 0;
  IdentityId identity = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

}  // namespace qan

#endif  // QAN_SAMPLE_HPP_

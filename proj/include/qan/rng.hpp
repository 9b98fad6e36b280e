#ifndef QAN_RNG_HPP_
#define QAN_RNG_HPP_

#include <cstdint>
#include <random>

namespace qan {

// Seeded generator. The engine is std::mt19937_64, whose output sequence is
// fixed by the standard; the real-valued transforms below are implemented
// here rather than with <random> distributions so draws do not depend on the
// standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via the Marsaglia polar method.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace qan

#endif  // QAN_RNG_HPP_

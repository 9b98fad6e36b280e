#ifndef QAN_DATASET_HPP_
#define QAN_DATASET_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qan/rng.hpp"
#include "qan/sample.hpp"

namespace qan {

/// Parameters of the synthetic noisy-set generator.
struct GenSpec {
  std::size_t n_identities = 100;
  std::size_t sets_per_identity = 2;
  std::size_t samples_per_set = 8;
  std::size_t d_in = 5;
  double corruption_rate = 0.3;
  double beta_lo = 0.5;
  double beta_hi = 0.95;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  std::size_t d_in = 0;
  std::vector<ImageSet> sets;

  std::size_t sample_count() const;
  /// Distinct identities in ascending order.
  std::vector<IdentityId> identities() const;

  bool operator==(const Dataset&) const;
};

bool operator==(const Sample& a, const Sample& b);
bool operator==(const ImageSet& a, const ImageSet& b);

/// Uniform draw on the unit sphere in R^d.
Vector unit_sphere(std::size_t d, Rng& rng);

/// (1 - beta) * prototype + beta * distractor + noise. beta = 0 gives the
/// clean formula.
Vector mix_sample(std::span<const double> prototype, std::span<const double> distractor,
                  double beta, std::span<const double> noise);

/// Identities are numbered 0..n-1 and set ids are identity * sets_per_identity + s.
/// Each sample is corrupted with probability corruption_rate: beta ~ U(lo, hi),
/// the distractor is a fresh unit vector or another identity's prototype with
/// equal odds, and q_true = 1 - beta.
Dataset generate(const GenSpec& spec);

/// Splits by identity: identities < first_test_identity go to the first set.
std::pair<Dataset, Dataset> split_by_identity(const Dataset& d, IdentityId first_test_identity);

std::string serialize_dataset(const Dataset& d);
void save_dataset(const Dataset& d, const std::string& path);
Dataset parse_dataset(const std::string& text, const std::string& source = "<memory>");
Dataset load_dataset(const std::string& path);

}  // namespace qan

#endif  // QAN_DATASET_HPP_

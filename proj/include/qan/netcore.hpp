#ifndef QAN_NETCORE_HPP_
#define QAN_NETCORE_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qan/rng.hpp"

namespace qan {

using Vector = std::vector<double>;

enum class Activation { kIdentity, kRelu, kSigmoid };

std::string_view to_string(Activation act);
Activation activation_from_string(std::string_view name);

double sigmoid(double z);

/// A trainable tensor with its gradient accumulator and momentum buffer.
/// Stored row-major; a bias is a rows x 1 tensor.
struct Parameter {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vector value;
  Vector grad;
  Vector velocity;

  Parameter() = default;
  Parameter(std::string name, std::size_t rows, std::size_t cols);

  std::size_t size() const { return value.size(); }
  double& at(std::size_t r, std::size_t c) { return value[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return value[r * cols + c]; }
  void zero_grad();
};

/// Non-owning view over every trainable tensor of a model.
using ParamStore = std::vector<Parameter*>;

struct DenseLayer {
  Parameter weight;  // out x in
  Parameter bias;    // out x 1
  Activation activation = Activation::kIdentity;

  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in, std::size_t out,
             Activation act);

  std::size_t in_size() const { return weight.cols; }
  std::size_t out_size() const { return weight.rows; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

/// Everything dense_backward needs from the matching forward call.
struct DenseCache {
  Vector input;
  Vector pre;  // W x + b
  Vector output;
};

DenseCache dense_forward(const DenseLayer& layer, std::span<const double> x);

/// Returns dx and accumulates dW, db into the layer's gradient buffers.
Vector dense_backward(DenseLayer& layer, const DenseCache& cache,
                      std::span<const double> dy);

enum class InitScheme { kUniformHe, kZeros };

/// Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)) for kUniformHe; biases zero.
void init_params(DenseLayer& layer, Rng& rng, InitScheme scheme);
void init_uniform_he(Parameter& p, std::size_t fan_in, Rng& rng);

/// v <- momentum * v + grad; p <- p - lr * v; then grads are zeroed.
/// Throws before touching anything if a gradient is non-finite.
void sgd_step(const ParamStore& params, double lr, double momentum);

void zero_grads(const ParamStore& params);

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x);
  double value() const { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);

}  // namespace qan

#endif  // QAN_NETCORE_HPP_

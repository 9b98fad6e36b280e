#include "qan/netcore.hpp"

#include <cmath>

#include "qan/error.hpp"

namespace qan {

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kRelu:
      return "relu";
    case Activation::kSigmoid:
      return "sigmoid";
  }
  return "unknown";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw Error("unknown activation '" + std::string(name) + "'");
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Parameter::Parameter(std::string name, std::size_t rows, std::size_t cols)
    : name(std::move(name)),
      rows(rows),
      cols(cols),
      value(rows * cols, 0.0),
      grad(rows * cols, 0.0),
      velocity(rows * cols, 0.0) {}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

DenseLayer::DenseLayer(const std::string& name, std::size_t in,
                       std::size_t out, Activation act)
    : weight(name + ".weight", out, in),
      bias(name + ".bias", out, 1),
      activation(act),
      name_(name) {}

namespace {

double apply(Activation act, double z) {
  switch (act) {
    case Activation::kIdentity:
      return z;
    case Activation::kRelu:
      return z > 0.0 ? z : 0.0;
    case Activation::kSigmoid:
      return sigmoid(z);
  }
  return z;
}

double derivative(Activation act, double pre, double out) {
  switch (act) {
    case Activation::kIdentity:
      return 1.0;
    case Activation::kRelu:
      return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kSigmoid:
      return out * (1.0 - out);
  }
  return 1.0;
}

}  // namespace

DenseCache dense_forward(const DenseLayer& layer, std::span<const double> x) {
  const std::size_t in = layer.in_size();
  const std::size_t out = layer.out_size();
  if (x.size() != in) {
    throw Error("dense_forward: layer '" + layer.name() + "' expects input of size " +
                std::to_string(in) + ", got " + std::to_string(x.size()));
  }
  DenseCache cache;
  cache.input.assign(x.begin(), x.end());
  cache.pre.resize(out);
  cache.output.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double* w = layer.weight.value.data() + o * in;
    double z = layer.bias.value[o];
    for (std::size_t i = 0; i < in; ++i) z += w[i] * x[i];
    cache.pre[o] = z;
    cache.output[o] = apply(layer.activation, z);
  }
  return cache;
}

Vector dense_backward(DenseLayer& layer, const DenseCache& cache,
                      std::span<const double> dy) {
  const std::size_t in = layer.in_size();
  const std::size_t out = layer.out_size();
  if (cache.input.size() != in || cache.pre.size() != out ||
      cache.output.size() != out) {
    throw Error("dense_backward: cache does not match layer '" + layer.name() + "'");
  }
  if (dy.size() != out) {
    throw Error("dense_backward: layer '" + layer.name() + "' expects upstream gradient of size " +
                std::to_string(out) + ", got " + std::to_string(dy.size()));
  }
  Vector dx(in, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    const double delta =
        dy[o] * derivative(layer.activation, cache.pre[o], cache.output[o]);
    if (delta == 0.0) continue;
    const double* w = layer.weight.value.data() + o * in;
    double* gw = layer.weight.grad.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) {
      gw[i] += delta * cache.input[i];
      dx[i] += delta * w[i];
    }
    layer.bias.grad[o] += delta;
  }
  return dx;
}

void init_uniform_he(Parameter& p, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : p.value) v = rng.uniform(-bound, bound);
}

void init_params(DenseLayer& layer, Rng& rng, InitScheme scheme) {
  std::fill(layer.bias.value.begin(), layer.bias.value.end(), 0.0);
  if (scheme == InitScheme::kZeros) {
    std::fill(layer.weight.value.begin(), layer.weight.value.end(), 0.0);
    return;
  }
  init_uniform_he(layer.weight, layer.in_size(), rng);
}

void zero_grads(const ParamStore& params) {
  for (Parameter* p : params) p->zero_grad();
}

void sgd_step(const ParamStore& params, double lr, double momentum) {
  for (const Parameter* p : params) {
    for (std::size_t i = 0; i < p->grad.size(); ++i) {
      if (!std::isfinite(p->grad[i])) {
        throw Error("sgd_step: non-finite gradient in parameter '" + p->name +
                    "' at index " + std::to_string(i));
      }
    }
  }
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->velocity[i] = momentum * p->velocity[i] + p->grad[i];
      p->value[i] -= lr * p->velocity[i];
    }
    p->zero_grad();
  }
}

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    compensation_ += (sum_ - t) + x;
  } else {
    compensation_ += (x - t) + sum_;
  }
  sum_ = t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

}  // namespace qan

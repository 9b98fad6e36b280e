#include "qan/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "qan/error.hpp"
#include "qan/textio.hpp"

namespace qan {

void QanConfig::validate() const {
  if (d_in == 0) throw Error("config: d_in must be >= 1");
  if (trunk_dims.empty()) throw Error("config: trunk needs at least one layer");
  for (std::size_t d : trunk_dims) {
    if (d == 0) throw Error("config: trunk layer widths must be >= 1");
  }
  if (split_index < 1 || split_index > trunk_dims.size()) {
    throw Error("config: split_index " + std::to_string(split_index) +
                " outside [1, " + std::to_string(trunk_dims.size()) + "]");
  }
  if (d_embed == 0) throw Error("config: d_embed must be >= 1");
  if (n_classes == 0) throw Error("config: n_classes must be >= 1");
  if (!(margin > 0.0)) throw Error("config: margin must be > 0");
  if (!(lambda_class >= 0.0)) throw Error("config: lambda_class must be >= 0");
}

std::size_t default_split_index(std::size_t trunk_layers) {
  return trunk_layers == 0 ? 1 : (trunk_layers + 1) / 2;
}

QanModel::QanModel(const QanConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  std::size_t in = config_.d_in;
  for (std::size_t l = 0; l < config_.trunk_dims.size(); ++l) {
    trunk.emplace_back("trunk." + std::to_string(l), in, config_.trunk_dims[l],
                       Activation::kRelu);
    init_params(trunk.back(), rng, InitScheme::kUniformHe);
    in = config_.trunk_dims[l];
  }
  feature_head.emplace_back("feature.0", in, config_.d_embed, Activation::kIdentity);
  init_params(feature_head.back(), rng, InitScheme::kUniformHe);

  std::size_t q_in = config_.trunk_dims[config_.split_index - 1];
  if (config_.quality_hidden > 0) {
    quality_head.emplace_back("quality.0", q_in, config_.quality_hidden,
                              Activation::kRelu);
    init_params(quality_head.back(), rng, InitScheme::kUniformHe);
    q_in = config_.quality_hidden;
  }
  quality_head.emplace_back("quality." + std::to_string(quality_head.size()), q_in, 1,
                            Activation::kSigmoid);
  init_params(quality_head.back(), rng, InitScheme::kUniformHe);

  classifier = DenseLayer("classifier", config_.d_embed, config_.n_classes,
                          Activation::kIdentity);
  init_params(classifier, rng, InitScheme::kUniformHe);
}

namespace {

template <typename Layers, typename Out>
void append(Out& out, Layers& layers) {
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

template <typename Model, typename Out>
void append_all(Out& out, Model& m) {
  append(out, m.trunk);
  append(out, m.feature_head);
  append(out, m.quality_head);
  out.push_back(&m.classifier.weight);
  out.push_back(&m.classifier.bias);
}

}  // namespace

ParamStore QanModel::trunk_params() {
  ParamStore out;
  append(out, trunk);
  return out;
}

ParamStore QanModel::feature_params() {
  ParamStore out;
  append(out, feature_head);
  return out;
}

ParamStore QanModel::quality_params() {
  ParamStore out;
  append(out, quality_head);
  return out;
}

ParamStore QanModel::classifier_params() {
  return {&classifier.weight, &classifier.bias};
}

ParamStore QanModel::params() {
  ParamStore out;
  append_all(out, *this);
  return out;
}

std::vector<const Parameter*> QanModel::params() const {
  std::vector<const Parameter*> out;
  append_all(out, *this);
  return out;
}

void QanModel::step(const ParamStore& params, double lr, double momentum) {
  sgd_step(params, lr, momentum);
  mark_modified();
}

SampleForward forward_sample(const QanModel& model, std::span<const double> x) {
  const QanConfig& cfg = model.config();
  if (x.size() != cfg.d_in) {
    throw Error("forward_sample: expected input of size " + std::to_string(cfg.d_in) +
                ", got " + std::to_string(x.size()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw Error("forward_sample: input contains a non-finite value");
  }
  SampleForward fwd;
  fwd.trunk.reserve(model.trunk.size());
  std::span<const double> h = x;
  for (const DenseLayer& layer : model.trunk) {
    fwd.trunk.push_back(dense_forward(layer, h));
    h = fwd.trunk.back().output;
  }
  for (const DenseLayer& layer : model.feature_head) {
    fwd.feature.push_back(dense_forward(layer, h));
    h = fwd.feature.back().output;
  }
  if (cfg.normalize_embedding) {
    const Vector& f = fwd.feature.back().output;
    fwd.feature_norm = std::sqrt(squared_norm(f));
    fwd.normalized = true;
    // A zero feature vector (every trunk unit dead) stays zero.
    fwd.R.assign(f.size(), 0.0);
    if (fwd.feature_norm > 0.0) {
      for (std::size_t j = 0; j < f.size(); ++j) fwd.R[j] = f[j] / fwd.feature_norm;
    }
  }
  std::span<const double> q = fwd.middle(cfg.split_index);
  for (const DenseLayer& layer : model.quality_head) {
    fwd.quality.push_back(dense_forward(layer, q));
    q = fwd.quality.back().output;
  }
  return fwd;
}

Vector normalize_qualities(std::span<const double> mu_raw) {
  if (mu_raw.empty()) throw Error("normalize_qualities: empty set");
  CompensatedSum total;
  for (double r : mu_raw) {
    if (!(r > 0.0)) throw Error("normalize_qualities: raw quality must be > 0");
    total.add(r);
  }
  const double s = total.value();
  Vector mu(mu_raw.size());
  for (std::size_t i = 0; i < mu_raw.size(); ++i) mu[i] = mu_raw[i] / s;
  return mu;
}

Vector normalize_qualities_backward(std::span<const double> mu_raw,
                                    std::span<const double> mu,
                                    std::span<const double> dmu) {
  if (mu_raw.size() != mu.size() || mu.size() != dmu.size()) {
    throw Error("normalize_qualities_backward: size mismatch");
  }
  CompensatedSum total;
  for (double r : mu_raw) total.add(r);
  CompensatedSum weighted;
  for (std::size_t i = 0; i < mu.size(); ++i) weighted.add(mu[i] * dmu[i]);
  const double s = total.value();
  const double w = weighted.value();
  // d mu_i / d r_k = (delta_ik - mu_i) / s
  Vector out(mu.size());
  for (std::size_t k = 0; k < mu.size(); ++k) out[k] = (dmu[k] - w) / s;
  return out;
}

Vector set_pool_forward(const std::vector<Vector>& R, std::span<const double> mu) {
  if (R.empty()) throw Error("set_pool_forward: empty set");
  if (R.size() != mu.size()) {
    throw Error("set_pool_forward: " + std::to_string(R.size()) + " embeddings but " +
                std::to_string(mu.size()) + " qualities");
  }
  CompensatedSum mass;
  for (double m : mu) mass.add(m);
  if (std::abs(mass.value() - 1.0) > 1e-9) {
    throw Error("set_pool_forward: qualities are not normalized (sum " +
                format_double(mass.value()) + ")");
  }
  const std::size_t d = R.front().size();
  Vector Ra(d);
  for (std::size_t j = 0; j < d; ++j) {
    CompensatedSum acc;
    for (std::size_t i = 0; i < R.size(); ++i) {
      if (R[i].size() != d) throw Error("set_pool_forward: ragged embeddings");
      acc.add(mu[i] * R[i][j]);
    }
    Ra[j] = acc.value();
  }
  return Ra;
}

PoolGradients set_pool_backward(const std::vector<Vector>& R,
                                std::span<const double> mu,
                                std::span<const double> Ra,
                                std::span<const double> g) {
  if (R.size() != mu.size() || R.empty()) {
    throw Error("set_pool_backward: size mismatch between embeddings and qualities");
  }
  if (Ra.size() != g.size()) {
    throw Error("set_pool_backward: gradient has size " + std::to_string(g.size()) +
                ", pooled vector has size " + std::to_string(Ra.size()));
  }
  PoolGradients out;
  out.dR.resize(R.size());
  out.dmu.resize(R.size());
  for (std::size_t i = 0; i < R.size(); ++i) {
    if (R[i].size() != Ra.size()) throw Error("set_pool_backward: ragged embeddings");
    out.dR[i].resize(g.size());
    double s = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      out.dR[i][j] = mu[i] * g[j];
      s += g[j] * (R[i][j] - Ra[j]);
    }
    out.dmu[i] = s;
  }
  return out;
}

SetEmbedding embed_set(const QanModel& model, const ImageSet& set) {
  if (set.samples.empty()) {
    throw Error("embed_set: set " + std::to_string(set.set_id) + " is empty");
  }
  SetEmbedding emb;
  emb.generation = model.generation();
  emb.samples.reserve(set.size());
  emb.R.reserve(set.size());
  emb.mu_raw.reserve(set.size());
  for (const Sample& s : set.samples) {
    emb.samples.push_back(forward_sample(model, s.x));
    emb.R.push_back(emb.samples.back().embedding());
    emb.mu_raw.push_back(emb.samples.back().mu_raw());
  }
  emb.mu = normalize_qualities(emb.mu_raw);
  emb.Ra = set_pool_forward(emb.R, emb.mu);
  return emb;
}

namespace {

Vector backward_layers(std::vector<DenseLayer>& layers,
                       const std::vector<DenseCache>& caches, Vector d) {
  for (std::size_t l = layers.size(); l-- > 0;) {
    d = dense_backward(layers[l], caches[l], d);
  }
  return d;
}

void backward_trunk(QanModel& model, const SampleForward& fwd, Vector d,
                    const Vector* d_middle) {
  const std::size_t split = model.config().split_index;
  for (std::size_t l = model.trunk.size(); l-- > 0;) {
    if (d_middle != nullptr && l + 1 == split) {
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += (*d_middle)[j];
    }
    d = dense_backward(model.trunk[l], fwd.trunk[l], d);
  }
}

// Backward of R = f / |f|: df = (dR - R <R, dR>) / |f|. At f = 0 the
// projection has no derivative; zero is used.
Vector normalize_backward(const SampleForward& fwd, Vector dR) {
  if (!fwd.normalized) return dR;
  if (!(fwd.feature_norm > 0.0)) return Vector(dR.size(), 0.0);
  const double along = dot(fwd.R, dR);
  for (std::size_t j = 0; j < dR.size(); ++j) {
    dR[j] = (dR[j] - fwd.R[j] * along) / fwd.feature_norm;
  }
  return dR;
}

}  // namespace

void backward_feature(QanModel& model, const SampleForward& fwd,
                      std::span<const double> dR) {
  Vector d = backward_layers(model.feature_head, fwd.feature,
                             normalize_backward(fwd, Vector(dR.begin(), dR.end())));
  backward_trunk(model, fwd, std::move(d), nullptr);
}

void backward_set(QanModel& model, const SetEmbedding& emb,
                  std::span<const double> g, std::span<const Vector> class_grads) {
  if (emb.generation != model.generation()) {
    throw Error("backward_set: embedding was computed before the last parameter update");
  }
  const std::size_t n = emb.size();
  if (n == 0 || emb.samples.size() != n || emb.mu.size() != n || emb.mu_raw.size() != n) {
    throw Error("backward_set: embedding caches are incomplete");
  }
  if (g.size() != model.config().d_embed) {
    throw Error("backward_set: gradient has size " + std::to_string(g.size()) +
                ", expected " + std::to_string(model.config().d_embed));
  }
  if (!class_grads.empty() && class_grads.size() != n) {
    throw Error("backward_set: expected one class gradient per sample");
  }
  PoolGradients pool = set_pool_backward(emb.R, emb.mu, emb.Ra, g);
  Vector dmu_raw = normalize_qualities_backward(emb.mu_raw, emb.mu, pool.dmu);

  for (std::size_t i = 0; i < n; ++i) {
    const SampleForward& fwd = emb.samples[i];
    Vector dR = std::move(pool.dR[i]);
    if (!class_grads.empty()) {
      if (class_grads[i].size() != dR.size()) {
        throw Error("backward_set: class gradient size mismatch");
      }
      for (std::size_t j = 0; j < dR.size(); ++j) dR[j] += class_grads[i][j];
    }
    Vector d_top =
        backward_layers(model.feature_head, fwd.feature, normalize_backward(fwd, std::move(dR)));
    Vector d_middle = backward_layers(model.quality_head, fwd.quality, Vector{dmu_raw[i]});
    backward_trunk(model, fwd, std::move(d_top), &d_middle);
  }
}

// Checkpoint format:
//   QANMODEL v1
//   config d_in=.. trunk=a,b,.. split=.. d_embed=.. quality_hidden=.. n_classes=.. margin=.. lambda_class=..
//   param <name> <rows> <cols> <values...>
std::string serialize_checkpoint(const QanModel& model) {
  const QanConfig& c = model.config();
  std::ostringstream out;
  out << "QANMODEL v1\n";
  out << "config d_in=" << c.d_in << " trunk=";
  for (std::size_t i = 0; i < c.trunk_dims.size(); ++i) {
    out << (i ? "," : "") << c.trunk_dims[i];
  }
  out << " split=" << c.split_index << " d_embed=" << c.d_embed
      << " quality_hidden=" << c.quality_hidden << " n_classes=" << c.n_classes
      << " margin=" << format_double(c.margin)
      << " lambda_class=" << format_double(c.lambda_class)
      << " normalize=" << (c.normalize_embedding ? 1 : 0) << "\n";
  for (const Parameter* p : model.params()) {
    out << "param " << p->name << " " << p->rows << " " << p->cols;
    for (double v : p->value) out << " " << format_double(v);
    out << "\n";
  }
  return out.str();
}

void save_checkpoint(const QanModel& model, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

namespace {

std::size_t parse_count(const std::string& path, std::size_t line, std::string_view key,
                        std::string_view value) {
  auto v = parse_int(value);
  if (!v || *v < 0) {
    throw ParseError(path, line, "invalid value for '" + std::string(key) + "'");
  }
  return static_cast<std::size_t>(*v);
}

}  // namespace

QanModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || line != "QANMODEL v1") {
    throw ParseError(path, 1, "expected header 'QANMODEL v1'");
  }
  ++lineno;
  if (!std::getline(in, line)) throw ParseError(path, 2, "missing config line");
  ++lineno;
  auto tokens = split_ws(line);
  if (tokens.empty() || tokens[0] != "config") {
    throw ParseError(path, lineno, "expected config line");
  }
  QanConfig cfg;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    auto eq = tokens[t].find('=');
    if (eq == std::string_view::npos) throw ParseError(path, lineno, "malformed config field");
    std::string_view key = tokens[t].substr(0, eq);
    std::string_view value = tokens[t].substr(eq + 1);
    if (key == "d_in") {
      cfg.d_in = parse_count(path, lineno, key, value);
    } else if (key == "trunk") {
      cfg.trunk_dims.clear();
      std::size_t start = 0;
      while (start <= value.size()) {
        std::size_t comma = value.find(',', start);
        if (comma == std::string_view::npos) comma = value.size();
        cfg.trunk_dims.push_back(
            parse_count(path, lineno, key, value.substr(start, comma - start)));
        start = comma + 1;
      }
    } else if (key == "split") {
      cfg.split_index = parse_count(path, lineno, key, value);
    } else if (key == "d_embed") {
      cfg.d_embed = parse_count(path, lineno, key, value);
    } else if (key == "quality_hidden") {
      cfg.quality_hidden = parse_count(path, lineno, key, value);
    } else if (key == "n_classes") {
      cfg.n_classes = parse_count(path, lineno, key, value);
    } else if (key == "margin" || key == "lambda_class") {
      auto v = parse_double(value);
      if (!v) throw ParseError(path, lineno, "invalid value for '" + std::string(key) + "'");
      (key == "margin" ? cfg.margin : cfg.lambda_class) = *v;
    } else if (key == "normalize") {
      if (value != "0" && value != "1") throw ParseError(path, lineno, "normalize must be 0 or 1");
      cfg.normalize_embedding = value == "1";
    } else {
      throw ParseError(path, lineno, "unknown config field '" + std::string(key) + "'");
    }
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw ParseError(path, lineno, e.what());
  }
  QanModel model(cfg, 0);
  ParamStore params = model.params();
  std::size_t next = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] != "param" || tok.size() < 4) throw ParseError(path, lineno, "expected param record");
    if (next >= params.size()) throw ParseError(path, lineno, "too many parameter records");
    Parameter& p = *params[next++];
    if (tok[1] != p.name) {
      throw ParseError(path, lineno, "expected parameter '" + p.name + "', found '" +
                                         std::string(tok[1]) + "'");
    }
    const std::size_t rows = parse_count(path, lineno, "rows", tok[2]);
    const std::size_t cols = parse_count(path, lineno, "cols", tok[3]);
    if (rows != p.rows || cols != p.cols) {
      throw ParseError(path, lineno, "shape of '" + p.name + "' does not match config");
    }
    if (tok.size() != 4 + p.size()) {
      throw ParseError(path, lineno, "wrong number of values for '" + p.name + "'");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto v = parse_double(tok[4 + i]);
      if (!v) throw ParseError(path, lineno, "non-numeric value in '" + p.name + "'");
      if (!std::isfinite(*v)) throw ParseError(path, lineno, "non-finite value in '" + p.name + "'");
      p.value[i] = *v;
    }
  }
  if (next != params.size()) {
    throw ParseError(path, lineno, "missing parameter '" + params[next]->name + "'");
  }
  return model;
}

}  // namespace qan

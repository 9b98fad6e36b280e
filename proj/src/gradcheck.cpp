#include "qan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qan/error.hpp"

namespace qan {

Vector numeric_grad(const std::function<double(std::span<const double>)>& f,
                    std::span<const double> p, double h) {
  if (!(h > 0.0)) throw Error("numeric_grad: step must be > 0");
  Vector work(p.begin(), p.end());
  Vector g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    work[i] = p[i] + h;
    const double fp = f(work);
    work[i] = p[i] - h;
    const double fm = f(work);
    work[i] = p[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error("numeric_grad: objective is not finite around coordinate " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

std::string GradCheckReport::table() const {
  std::ostringstream out;
  out << "block                 size   max_rel       median_rel    max_abs       worst\n";
  for (const BlockReport& b : blocks) {
    std::string name = b.name;
    if (name.size() < 20) name.resize(20, ' ');
    out << name << "  " << b.size;
    out.setf(std::ios::scientific);
    out.precision(3);
    out << "   " << b.max_rel << "     " << b.median_rel << "     " << b.max_abs << "     "
        << b.worst_index << "\n";
    out.unsetf(std::ios::scientific);
  }
  if (vacuous) out << "vacuous check: every analytic gradient is zero; use a violating triplet\n";
  out << (pass ? "PASS" : "FAIL") << "\n";
  return out.str();
}

GradCheckReport check_model(const QanModel& model, const ImageSet& anchor,
                            const ImageSet& positive, const ImageSet& negative,
                            const LabelMap& labels, bool hinge, double h) {
  QanModel analytic = model;
  zero_grads(analytic.params());
  accumulate_triplet(analytic, anchor, positive, negative, labels, hinge);

  QanModel probe = model;
  ParamStore analytic_params = analytic.params();
  ParamStore probe_params = probe.params();

  GradCheckReport report;
  bool any_nonzero = false;
  for (std::size_t b = 0; b < probe_params.size(); ++b) {
    Parameter& target = *probe_params[b];
    const Vector original = target.value;
    auto objective = [&](std::span<const double> values) {
      std::copy(values.begin(), values.end(), target.value.begin());
      return triplet_objective(probe, anchor, positive, negative, labels, hinge);
    };
    const Vector numeric = numeric_grad(objective, original, h);
    target.value = original;

    const Vector& grad = analytic_params[b]->grad;
    BlockReport block;
    block.name = target.name;
    block.size = grad.size();
    Vector rel(grad.size());
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (grad[i] != 0.0) any_nonzero = true;
      rel[i] = relative_error(grad[i], numeric[i]);
      const double abs_err = std::abs(grad[i] - numeric[i]);
      if (rel[i] > block.max_rel) {
        block.max_rel = rel[i];
        block.worst_index = i;
      }
      block.max_abs = std::max(block.max_abs, abs_err);
    }
    if (!rel.empty()) {
      std::sort(rel.begin(), rel.end());
      const std::size_t n = rel.size();
      block.median_rel = n % 2 ? rel[n / 2] : 0.5 * (rel[n / 2 - 1] + rel[n / 2]);
    }
    report.blocks.push_back(block);
  }
  report.vacuous = !any_nonzero;
  report.pass = !report.vacuous &&
                std::all_of(report.blocks.begin(), report.blocks.end(), [](const BlockReport& b) {
                  return b.max_rel < GradCheckReport::kMaxRelTolerance &&
                         b.median_rel < GradCheckReport::kMedianRelTolerance;
                });
  return report;
}

GradCheckReport check_model(const TripletInstance& inst, double h) {
  const LabelMap labels(inst.data);
  return check_model(inst.model, inst.data.sets.at(0), inst.data.sets.at(1),
                     inst.data.sets.at(2), labels, inst.hinge, h);
}

QanConfig tiny_config() {
  QanConfig c;
  c.d_in = 5;
  c.trunk_dims = {6, 5};
  c.split_index = 1;
  c.d_embed = 4;
  c.quality_hidden = 4;
  c.n_classes = 2;
  c.margin = 2.0;
  c.lambda_class = 1.0;
  return c;
}

namespace {

bool relu_clear(const std::vector<DenseLayer>& layers, const std::vector<DenseCache>& caches,
                double clearance) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].activation != Activation::kRelu) continue;
    for (double z : caches[l].pre) {
      if (std::abs(z) < clearance) return false;
    }
  }
  return true;
}

bool clear_of_kinks(const QanModel& model, const Dataset& data, bool hinge, double clearance) {
  std::vector<SetEmbedding> emb;
  for (const ImageSet& s : data.sets) {
    emb.push_back(embed_set(model, s));
    for (const SampleForward& f : emb.back().samples) {
      if (!relu_clear(model.trunk, f.trunk, clearance) ||
          !relu_clear(model.feature_head, f.feature, clearance) ||
          !relu_clear(model.quality_head, f.quality, clearance)) {
        return false;
      }
    }
  }
  if (!hinge) return true;
  const TripletResult t =
      triplet_loss(emb[0].Ra, emb[1].Ra, emb[2].Ra, model.config().margin, true);
  return t.raw > clearance;
}

}  // namespace

TripletInstance make_tiny_instance(std::uint64_t seed, const QanConfig& cfg,
                                   std::size_t set_size, double kink_clearance) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    QanModel model(cfg, rng.next_u64());
    // Nonzero biases so the check also exercises bias gradients away from init.
    for (Parameter* p : model.params()) {
      if (p->cols == 1) {
        for (double& v : p->value) v = 0.1 * rng.normal();
      }
    }
    Dataset data;
    data.d_in = cfg.d_in;
    const IdentityId ids[3] = {0, 0, 1};
    for (int s = 0; s < 3; ++s) {
      ImageSet set;
      set.set_id = s;
      set.identity = ids[s];
      for (std::size_t k = 0; k < set_size; ++k) {
        Sample sample;
        sample.identity = ids[s];
        sample.x.resize(cfg.d_in);
        for (double& v : sample.x) v = rng.normal();
        set.samples.push_back(std::move(sample));
      }
      data.sets.push_back(std::move(set));
    }
    if (clear_of_kinks(model, data, true, kink_clearance)) {
      return TripletInstance{std::move(model), std::move(data), true};
    }
  }
  throw Error("make_tiny_instance: could not find a kink-free instance");
}

}  // namespace qan

#include "qan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "qan/error.hpp"
#include "qan/textio.hpp"

namespace qan {

void GenSpec::validate() const {
  if (n_identities < 1 || sets_per_identity < 1 || samples_per_set < 1 || d_in < 1) {
    throw Error("gen spec: all counts must be >= 1");
  }
  if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0)) {
    throw Error("gen spec: corruption rate must lie in [0, 1]");
  }
  if (!(beta_lo >= 0.0 && beta_lo <= beta_hi && beta_hi <= 1.0)) {
    throw Error("gen spec: need 0 <= beta_lo <= beta_hi <= 1");
  }
  if (!(noise_sigma >= 0.0)) throw Error("gen spec: noise sigma must be >= 0");
}

std::size_t Dataset::sample_count() const {
  std::size_t n = 0;
  for (const ImageSet& s : sets) n += s.size();
  return n;
}

std::vector<IdentityId> Dataset::identities() const {
  std::set<IdentityId> ids;
  for (const ImageSet& s : sets) ids.insert(s.identity);
  return {ids.begin(), ids.end()};
}

bool operator==(const Sample& a, const Sample& b) {
  return a.identity == b.identity && a.q_true == b.q_true && a.x == b.x;
}

bool operator==(const ImageSet& a, const ImageSet& b) {
  return a.set_id == b.set_id && a.identity == b.identity && a.samples == b.samples;
}

bool Dataset::operator==(const Dataset& o) const { return d_in == o.d_in && sets == o.sets; }

Vector unit_sphere(std::size_t d, Rng& rng) {
  Vector v(d);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      n2 += x * x;
    }
  } while (n2 == 0.0);
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

Vector mix_sample(std::span<const double> prototype, std::span<const double> distractor,
                  double beta, std::span<const double> noise) {
  Vector x(prototype.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    x[j] = (1.0 - beta) * prototype[j] + beta * distractor[j] + noise[j];
  }
  return x;
}

Dataset generate(const GenSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Vector> prototypes;
  prototypes.reserve(spec.n_identities);
  for (std::size_t c = 0; c < spec.n_identities; ++c) {
    prototypes.push_back(unit_sphere(spec.d_in, rng));
  }
  const Vector zero(spec.d_in, 0.0);
  Dataset out;
  out.d_in = spec.d_in;
  for (std::size_t c = 0; c < spec.n_identities; ++c) {
    for (std::size_t s = 0; s < spec.sets_per_identity; ++s) {
      ImageSet set;
      set.identity = static_cast<IdentityId>(c);
      set.set_id = static_cast<SetId>(c * spec.sets_per_identity + s);
      for (std::size_t k = 0; k < spec.samples_per_set; ++k) {
        Sample sample;
        sample.identity = set.identity;
        const bool corrupted = rng.bernoulli(spec.corruption_rate);
        double beta = 0.0;
        Vector distractor;
        if (corrupted) {
          beta = rng.uniform(spec.beta_lo, spec.beta_hi);
          const bool clutter = rng.bernoulli(0.5);
          if (clutter || spec.n_identities == 1) {
            distractor = unit_sphere(spec.d_in, rng);
          } else {
            std::size_t other = rng.below(spec.n_identities - 1);
            if (other >= c) ++other;
            distractor = prototypes[other];
          }
        }
        Vector noise(spec.d_in);
        for (double& e : noise) e = spec.noise_sigma * rng.normal();
        sample.x = mix_sample(prototypes[c], corrupted ? distractor : zero, beta, noise);
        sample.q_true = 1.0 - beta;
        set.samples.push_back(std::move(sample));
      }
      out.sets.push_back(std::move(set));
    }
  }
  return out;
}

std::pair<Dataset, Dataset> split_by_identity(const Dataset& d,
                                              IdentityId first_test_identity) {
  Dataset a;
  Dataset b;
  a.d_in = b.d_in = d.d_in;
  for (const ImageSet& s : d.sets) {
    (s.identity < first_test_identity ? a : b).sets.push_back(s);
  }
  return {std::move(a), std::move(b)};
}

std::string serialize_dataset(const Dataset& d) {
  std::string out = "QANSET v1 d_in=" + std::to_string(d.d_in) + "\n";
  for (const ImageSet& set : d.sets) {
    for (const Sample& s : set.samples) {
      out += std::to_string(s.identity);
      out += ' ';
      out += std::to_string(set.set_id);
      out += ' ';
      out += format_double(s.q_true);
      for (double v : s.x) {
        out += ' ';
        out += format_double(v);
      }
      out += '\n';
    }
  }
  return out;
}

void save_dataset(const Dataset& d, const std::string& path) {
  write_file_atomic(path, serialize_dataset(d));
}

Dataset parse_dataset(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  Dataset out;
  bool have_header = false;
  std::map<SetId, std::size_t> index;  // set id -> position in out.sets
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    auto tok = split_ws(line);
    if (!have_header) {
      if (tok.size() != 3 || tok[0] != "QANSET" || tok[1] != "v1" ||
          tok[2].substr(0, 5) != "d_in=") {
        throw ParseError(source, lineno, "expected header 'QANSET v1 d_in=<int>'");
      }
      auto d = parse_int(tok[2].substr(5));
      if (!d || *d < 1) throw ParseError(source, lineno, "invalid d_in");
      out.d_in = static_cast<std::size_t>(*d);
      have_header = true;
      continue;
    }
    if (tok.size() != 3 + out.d_in) {
      throw ParseError(source, lineno, "expected " + std::to_string(3 + out.d_in) +
                                           " fields, found " + std::to_string(tok.size()));
    }
    auto identity = parse_int(tok[0]);
    auto set_id = parse_int(tok[1]);
    if (!identity) throw ParseError(source, lineno, "non-numeric identity");
    if (!set_id) throw ParseError(source, lineno, "non-numeric set id");
    auto q = parse_double(tok[2]);
    if (!q) throw ParseError(source, lineno, "non-numeric q_true");
    if (!(*q >= 0.0 && *q <= 1.0)) throw ParseError(source, lineno, "q_true outside [0, 1]");
    Sample s;
    s.identity = *identity;
    s.q_true = *q;
    s.x.resize(out.d_in);
    for (std::size_t j = 0; j < out.d_in; ++j) {
      auto v = parse_double(tok[3 + j]);
      if (!v) {
        throw ParseError(source, lineno, "non-numeric value in column " + std::to_string(3 + j));
      }
      if (!std::isfinite(*v)) {
        throw ParseError(source, lineno, "non-finite value in column " + std::to_string(3 + j));
      }
      s.x[j] = *v;
    }
    auto it = index.find(*set_id);
    if (it == index.end()) {
      it = index.emplace(*set_id, out.sets.size()).first;
      ImageSet set;
      set.set_id = *set_id;
      set.identity = s.identity;
      out.sets.push_back(std::move(set));
    }
    ImageSet& set = out.sets[it->second];
    if (set.identity != s.identity) {
      throw ParseError(source, lineno, "set " + std::to_string(set.set_id) +
                                           " mixes identities");
    }
    set.samples.push_back(std::move(s));
  }
  if (!have_header) throw ParseError(source, lineno, "missing header");
  if (out.sets.empty()) throw ParseError(source, lineno, "no sets");
  return out;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), path);
}

}  // namespace qan

// qan: generate synthetic set data, train, evaluate, check gradients and
// dump per-sample qualities. Every command writes a JSON run manifest next to
// its outputs; `--from-manifest` replays one (explicit flags still win).

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "manifest.hpp"
#include "qan/dataset.hpp"
#include "qan/error.hpp"
#include "qan/eval.hpp"
#include "qan/gradcheck.hpp"
#include "qan/model.hpp"
#include "qan/textio.hpp"
#include "qan/trainer.hpp"

namespace fs = std::filesystem;
using namespace qan;
using qan::cli::RunManifest;

namespace {

// Bad flag values that only show up once configs are assembled.
struct UsageError : Error {
  using Error::Error;
};

std::string stringify(const std::string& v) { return v; }
std::string stringify(double v) { return format_double(v); }
std::string stringify(bool v) { return v ? "true" : "false"; }
template <class T>
std::string stringify(T v) requires std::is_integral_v<T> {
  return std::to_string(v);
}

// Registers options and remembers how to print their resolved values, so the
// manifest can replay them.
class Flags {
 public:
  explicit Flags(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& names, T& var, const std::string& desc) {
    CLI::Option* o = app_->add_option(names, var, desc)->capture_default_str();
    record(o, [&var] { return stringify(var); });
    return o;
  }

  CLI::Option* flag(const std::string& names, bool& var, const std::string& desc) {
    CLI::Option* o = app_->add_flag(names, var, desc);
    record(o, [&var] { return stringify(var); });
    return o;
  }

  std::vector<std::pair<std::string, std::string>> resolved() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [name, get] : items_) {
      std::string v = get();
      if (!v.empty()) out.emplace_back(name, v);
    }
    return out;
  }

  CLI::App* app() const { return app_; }

 private:
  void record(CLI::Option* o, std::function<std::string()> get) {
    items_.emplace_back("--" + o->get_lnames().front(), std::move(get));
  }

  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> items_;
};

std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> out;
  std::string_view rest = s;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    auto v = parse_int(rest.substr(0, comma));
    if (!v || *v < 1) throw UsageError("--trunk expects comma-separated positive widths, got '" + s + "'");
    out.push_back(static_cast<std::size_t>(*v));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  if (out.empty()) throw UsageError("--trunk needs at least one layer");
  return out;
}

std::vector<EvalMethod> parse_methods(const std::string& s) {
  std::vector<EvalMethod> out;
  std::string_view rest = s;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    std::string name(rest.substr(0, comma));
    name.erase(std::remove(name.begin(), name.end(), '-'), name.end());
    try {
      const EvalMethod m = eval_method_from_string(name);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  if (out.empty()) throw UsageError("--methods needs at least one method");
  return out;
}

template <class F>
void validated(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  GenSpec spec;
  std::size_t test_identities = 0;
  std::string out;
  std::string test_out;
};

void run_gen(const GenArgs& a, RunManifest& m) {
  GenSpec spec = a.spec;
  validated([&] {
    spec.validate();
    if (a.test_identities > 0 && a.test_out.empty()) {
      throw Error("--test-identities needs --test-out");
    }
    if (a.test_identities == 0 && !a.test_out.empty()) {
      throw Error("--test-out needs --test-identities > 0");
    }
  });
  spec.n_identities += a.test_identities;
  const Dataset all = generate(spec);
  ensure_parent(a.out);
  m.resolved["gen"] = cli::to_json(spec);
  if (a.test_identities == 0) {
    save_dataset(all, a.out);
    m.outputs.push_back(a.out);
  } else {
    auto [train, test] = split_by_identity(all, static_cast<IdentityId>(a.spec.n_identities));
    ensure_parent(a.test_out);
    save_dataset(train, a.out);
    save_dataset(test, a.test_out);
    m.resolved["first_test_identity"] = a.spec.n_identities;
    m.outputs = {a.out, a.test_out};
  }
  std::cout << "wrote " << all.sample_count() << " samples in " << all.sets.size() << " sets\n";
  cli::write_manifest(m, a.out + ".manifest.json");
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  std::string trunk = "64,64";
  std::string split = "auto";
  QanConfig model;
  TrainConfig train;
  bool no_hinge = false;
  bool no_normalize = false;
};

void run_train(const TrainArgs& a, RunManifest& m) {
  QanConfig cfg = a.model;
  TrainConfig tc = a.train;
  tc.seed = a.seed;
  tc.hinge = !a.no_hinge;
  cfg.normalize_embedding = !a.no_normalize;
  cfg.trunk_dims = parse_dims(a.trunk);

  std::vector<std::size_t> splits;
  if (a.split == "all") {
    for (std::size_t k = 1; k <= cfg.trunk_dims.size(); ++k) splits.push_back(k);
  } else if (a.split == "auto") {
    splits.push_back(default_split_index(cfg.trunk_dims.size()));
  } else {
    auto v = parse_int(a.split);
    if (!v || *v < 1) throw UsageError("--split-index expects a positive integer, 'auto' or 'all'");
    splits.push_back(static_cast<std::size_t>(*v));
  }

  const Dataset d = load_dataset(a.data);
  cfg.d_in = d.d_in;
  cfg.n_classes = d.identities().size();
  m.inputs.push_back(a.data);

  for (std::size_t split : splits) {
    cfg.split_index = split;
    validated([&] {
      cfg.validate();
      tc.validate();
    });
  }
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (std::size_t split : splits) {
    cfg.split_index = split;
    const fs::path dir = splits.size() == 1 ? fs::path(a.out)
                                            : fs::path(a.out) / ("split_" + std::to_string(split));
    fs::create_directories(dir);
    tc.checkpoint_dir = dir.string();

    QanModel model(cfg, a.seed);
    const TrainLog log = train(model, d, tc);
    write_file_atomic((dir / "train_log.csv").string(), log.to_csv());
    m.outputs.push_back((dir / "train_log.csv").string());
    if (!log.pretrain.empty()) {
      write_file_atomic((dir / "pretrain_log.csv").string(), log.pretrain_csv());
      m.outputs.push_back((dir / "pretrain_log.csv").string());
    }
    save_checkpoint(model, (dir / "model.qanmodel").string());
    m.outputs.push_back((dir / "model.qanmodel").string());

    std::cout << "split " << split << ": ";
    if (log.records.empty()) {
      std::cout << "no joint epochs; initial checkpoint in " << dir.string() << "\n";
    } else {
      const EpochRecord& r = log.records.back();
      std::cout << "epoch " << r.epoch << " l_veri " << format_double(r.l_veri) << " l_class "
                << format_double(r.l_class) << " mu_clean " << format_double(r.mu_clean)
                << " mu_corrupt " << format_double(r.mu_corrupt) << "\n";
    }
    runs.push_back({{"dir", dir.string()}, {"model", cli::to_json(cfg)}});
  }
  m.resolved["train"] = cli::to_json(tc);
  m.resolved["runs"] = runs;
  cli::write_manifest(m, (fs::path(a.out) / "manifest.json").string());
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string methods = "qan,avepool,oracle,mincos,minl2";
  std::uint64_t pair_seed = 0;
};

void run_eval(const EvalArgs& a, RunManifest& m) {
  const std::vector<EvalMethod> methods = parse_methods(a.methods);
  const QanModel model = load_checkpoint(a.checkpoint);
  const Dataset d = load_dataset(a.data);
  m.inputs = {a.checkpoint, a.data};
  const EvalReport r = evaluate(model, d, methods, a.pair_seed);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const std::pair<const char*, std::string> files[] = {
      {"cmc.csv", r.cmc_csv()},
      {"roc.csv", r.roc_csv()},
      {"agreement.csv", r.agreement_csv()},
      {"deciles.csv", r.deciles_csv()},
  };
  for (const auto& [name, body] : files) {
    write_file_atomic((dir / name).string(), body);
    m.outputs.push_back((dir / name).string());
  }
  m.resolved["model"] = cli::to_json(model.config());
  std::cout << r.table();
  cli::write_manifest(m, (dir / "manifest.json").string());
}

// ---------------------------------------------------------------- gradcheck

struct GradArgs {
  std::size_t instances = 100;
  std::uint64_t first_seed = 0;
  double h = 1e-5;
  bool no_hinge = false;
  bool verbose = false;
  std::string out = "gradcheck.txt";
};

int run_gradcheck(const GradArgs& a, RunManifest& m) {
  if (!(a.h > 0.0)) throw UsageError("--step must be > 0");
  std::string report;
  std::size_t passed = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.instances; ++i) {
    const std::uint64_t seed = a.first_seed + i;
    TripletInstance inst = make_tiny_instance(seed);
    inst.hinge = !a.no_hinge;
    const GradCheckReport r = check_model(inst, a.h);
    for (const BlockReport& b : r.blocks) worst = std::max(worst, b.max_rel);
    passed += r.pass ? 1 : 0;
    if (!r.pass || a.verbose) report += "instance seed " + std::to_string(seed) + "\n" + r.table();
  }
  report += "passed " + std::to_string(passed) + "/" + std::to_string(a.instances) +
            " instances, worst max relative error " + format_double(worst) + "\n";
  std::cout << report;
  ensure_parent(a.out);
  write_file_atomic(a.out, report);
  m.resolved["model"] = cli::to_json(tiny_config());
  m.outputs.push_back(a.out);
  cli::write_manifest(m, a.out + ".manifest.json");
  return passed == a.instances ? 0 : 1;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
};

void run_inspect(const InspectArgs& a, RunManifest& m) {
  const QanModel model = load_checkpoint(a.checkpoint);
  const Dataset d = load_dataset(a.data);
  if (d.d_in != model.config().d_in) {
    throw Error("dataset d_in " + std::to_string(d.d_in) + " does not match checkpoint d_in " +
                std::to_string(model.config().d_in));
  }
  struct Row {
    IdentityId identity;
    SetId set_id;
    double q_true, mu_raw, mu;
  };
  std::vector<Row> rows;
  for (const ImageSet& s : d.sets) {
    const SetEmbedding e = embed_set(model, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      rows.push_back({s.identity, s.set_id, s.samples[i].q_true, e.mu_raw[i], e.mu[i]});
    }
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& x, const Row& y) { return x.mu_raw > y.mu_raw; });
  std::string csv = "identity,set_id,q_true,mu_raw,mu_normalized\n";
  for (const Row& r : rows) {
    csv += std::to_string(r.identity) + "," + std::to_string(r.set_id) + "," +
           format_double(r.q_true) + "," + format_double(r.mu_raw) + "," + format_double(r.mu) +
           "\n";
  }
  ensure_parent(a.out);
  write_file_atomic(a.out, csv);
  m.inputs = {a.checkpoint, a.data};
  m.outputs.push_back(a.out);
  std::cout << "wrote " << rows.size() << " rows to " << a.out << "\n";
  cli::write_manifest(m, a.out + ".manifest.json");
}

// ---------------------------------------------------------------- driver

struct Cli {
  CLI::App app{"Quality-aware set embedding experiments on synthetic data", "qan"};
  std::string from_manifest;
  GenArgs gen;
  TrainArgs train;
  EvalArgs eval;
  GradArgs grad;
  InspectArgs inspect;
  std::vector<std::pair<CLI::App*, Flags>> subs;

  Cli() {
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_version_flag("--version", std::string(cli::kToolVersion));

    {
      Flags f(app.add_subcommand("gen", "write a synthetic dataset"));
      f.add("--identities", gen.spec.n_identities, "identities in the main file");
      f.add("--sets", gen.spec.sets_per_identity, "sets per identity");
      f.add("--samples", gen.spec.samples_per_set, "samples per set");
      f.add("--d-in", gen.spec.d_in, "sample dimension");
      f.add("--rho", gen.spec.corruption_rate, "probability that a sample is corrupted");
      f.add("--beta-lo", gen.spec.beta_lo, "lower corruption strength");
      f.add("--beta-hi", gen.spec.beta_hi, "upper corruption strength");
      f.add("--noise", gen.spec.noise_sigma, "isotropic noise sigma");
      f.add("--seed", gen.spec.seed, "generator seed")->required();
      f.add("-o,--out", gen.out, "dataset path")->required();
      f.add("--test-identities", gen.test_identities,
            "extra held-out identities, written to --test-out");
      f.add("--test-out", gen.test_out, "held-out dataset path");
      subs.emplace_back(f.app(), std::move(f));
    }
    {
      Flags f(app.add_subcommand("train", "train a model on a dataset"));
      f.add("--data", train.data, "training dataset")->required();
      f.add("-o,--out", train.out, "run directory")->required();
      f.add("--seed", train.seed, "initialization and sampling seed")->required();
      f.add("--trunk", train.trunk, "trunk layer widths, comma separated");
      f.add("--split-index", train.split,
            "trunk layer feeding the quality head (1-based), 'auto' for the middle, 'all' to sweep");
      f.add("--d-embed", train.model.d_embed, "embedding width");
      f.add("--quality-hidden", train.model.quality_hidden, "quality head hidden width, 0 for none");
      f.add("--margin", train.model.margin, "triplet margin");
      f.add("--lambda", train.model.lambda_class, "classification loss weight");
      f.flag("--no-normalize", train.no_normalize, "keep per-sample embeddings unnormalized");
      f.add("--epochs", train.train.epochs, "joint training epochs");
      f.add("--triplets", train.train.triplets_per_epoch, "triplets per epoch");
      f.add("--lr", train.train.lr, "joint learning rate");
      f.add("--pretrain", train.train.pretrain_epochs, "classification pretraining epochs");
      f.add("--pretrain-lr", train.train.pretrain_lr, "pretraining learning rate");
      f.add("--lr-decay", train.train.lr_decay, "per-epoch learning rate factor");
      f.add("--momentum", train.train.momentum, "SGD momentum");
      f.flag("--no-hinge", train.no_hinge, "use the unhinged triplet loss (diagnostics)");
      subs.emplace_back(f.app(), std::move(f));
    }
    {
      Flags f(app.add_subcommand("eval", "CMC, ROC and quality agreement for a checkpoint"));
      f.add("--checkpoint", eval.checkpoint, "model checkpoint")->required();
      f.add("--data", eval.data, "evaluation dataset")->required();
      f.add("-o,--out", eval.out, "report directory")->required();
      f.add("--methods", eval.methods, "comma separated: qan,avepool,oracle,mincos,minl2");
      f.add("--pair-seed", eval.pair_seed, "seed for negative verification pairs");
      subs.emplace_back(f.app(), std::move(f));
    }
    {
      Flags f(app.add_subcommand("gradcheck", "finite-difference check on tiny models"));
      f.add("--instances", grad.instances, "number of seeded instances");
      f.add("--first-seed", grad.first_seed, "seed of the first instance");
      f.add("--step", grad.h, "central difference step");
      f.flag("--no-hinge", grad.no_hinge, "check the unhinged objective");
      f.flag("-v,--verbose", grad.verbose, "print every report, not only failures");
      f.add("-o,--out", grad.out, "report path");
      subs.emplace_back(f.app(), std::move(f));
    }
    {
      Flags f(app.add_subcommand("inspect", "per-sample quality dump sorted by mu_raw"));
      f.add("--checkpoint", inspect.checkpoint, "model checkpoint")->required();
      f.add("--data", inspect.data, "dataset")->required();
      f.add("-o,--out", inspect.out, "CSV path")->required();
      subs.emplace_back(f.app(), std::move(f));
    }
    for (auto& [sub, f] : subs) {
      sub->add_option("--from-manifest", from_manifest, "replay a run manifest");
    }
  }

  int dispatch() {
    for (auto& [sub, f] : subs) {
      if (!sub->parsed()) continue;
      RunManifest m;
      m.command = sub->get_name();
      m.flags = f.resolved();
      const std::string name = sub->get_name();
      if (name == "gen") {
        run_gen(gen, m);
      } else if (name == "train") {
        run_train(train, m);
      } else if (name == "eval") {
        run_eval(eval, m);
      } else if (name == "gradcheck") {
        return run_gradcheck(grad, m);
      } else {
        run_inspect(inspect, m);
      }
      return 0;
    }
    return 2;
  }
};

// Finds `--from-manifest` before CLI11 runs, so required flags can come from
// the manifest. Returns the command line with the manifest's flags inserted
// ahead of the user's, which take precedence.
std::vector<std::string> expand_manifest(const std::vector<std::string>& args) {
  std::optional<std::string> path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--from-manifest" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--from-manifest=", 0) == 0) {
      path = args[i].substr(std::strlen("--from-manifest="));
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!path) return args;
  const RunManifest m = cli::read_manifest(*path);
  if (rest.empty() || rest.front() != m.command) {
    throw UsageError("manifest '" + *path + "' records a '" + m.command + "' run");
  }
  std::vector<std::string> out = {rest.front()};
  for (const auto& [k, v] : m.flags) out.push_back(k + "=" + v);
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  Cli cli;
  try {
    args = expand_manifest(args);
    std::reverse(args.begin(), args.end());
    cli.app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = cli.app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  try {
    return cli.dispatch();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

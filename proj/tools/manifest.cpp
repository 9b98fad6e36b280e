#include "manifest.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "qan/error.hpp"
#include "qan/textio.hpp"

namespace qan::cli {

using nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

ordered_json to_json(const GenSpec& g) {
  return {{"n_identities", g.n_identities}, {"sets_per_identity", g.sets_per_identity},
          {"samples_per_set", g.samples_per_set}, {"d_in", g.d_in},
          {"corruption_rate", g.corruption_rate}, {"beta_lo", g.beta_lo},
          {"beta_hi", g.beta_hi}, {"noise_sigma", g.noise_sigma}, {"seed", g.seed}};
}

ordered_json to_json(const QanConfig& c) {
  return {{"d_in", c.d_in}, {"trunk_dims", c.trunk_dims}, {"split_index", c.split_index},
          {"d_embed", c.d_embed}, {"quality_hidden", c.quality_hidden},
          {"n_classes", c.n_classes}, {"margin", c.margin}, {"lambda_class", c.lambda_class},
          {"normalize_embedding", c.normalize_embedding}};
}

ordered_json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs}, {"triplets_per_epoch", t.triplets_per_epoch}, {"lr", t.lr},
          {"pretrain_lr", t.pretrain_lr}, {"lr_decay", t.lr_decay}, {"momentum", t.momentum},
          {"pretrain_epochs", t.pretrain_epochs}, {"seed", t.seed}, {"hinge", t.hinge}};
}

ordered_json RunManifest::to_json() const {
  ordered_json flag_obj = ordered_json::object();
  for (const auto& [k, v] : flags) flag_obj[k] = v;
  return {{"manifest_version", 1},
          {"tool_version", kToolVersion},
          {"formats", {{"dataset", "QANSET v1"}, {"checkpoint", "QANMODEL v1"}}},
          {"command", command},
          {"created_utc", utc_now()},
          {"flags", flag_obj},
          {"resolved", resolved},
          {"inputs", inputs},
          {"outputs", outputs}};
}

RunManifest RunManifest::from_json(const ordered_json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    for (const auto& [k, v] : j.at("flags").items()) m.flags.emplace_back(k, v.get<std::string>());
    if (j.contains("resolved")) m.resolved = j["resolved"];
    if (j.contains("inputs")) m.inputs = j["inputs"].get<std::vector<std::string>>();
    if (j.contains("outputs")) m.outputs = j["outputs"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const RunManifest& m, const std::string& path) {
  write_file_atomic(path, m.to_json().dump(2) + "\n");
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("manifest '" + path + "' is not valid JSON: " + e.what());
  }
  return RunManifest::from_json(j);
}

}  // namespace qan::cli

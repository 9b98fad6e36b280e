#ifndef QAN_TOOLS_MANIFEST_HPP_
#define QAN_TOOLS_MANIFEST_HPP_

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qan/dataset.hpp"
#include "qan/model.hpp"
#include "qan/trainer.hpp"

namespace qan::cli {

inline constexpr const char* kToolVersion = "1.0.0";

// Everything needed to re-run a command: the command name and the resolved
// value of every flag, plus descriptive copies of the configs it produced.
struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> flags;  // "--name", value
  nlohmann::ordered_json resolved = nlohmann::ordered_json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::ordered_json& j);
};

nlohmann::ordered_json to_json(const GenSpec& g);
nlohmann::ordered_json to_json(const QanConfig& c);
nlohmann::ordered_json to_json(const TrainConfig& t);

void write_manifest(const RunManifest& m, const std::string& path);
RunManifest read_manifest(const std::string& path);

}  // namespace qan::cli

#endif  // QAN_TOOLS_MANIFEST_HPP_

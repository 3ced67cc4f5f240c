#pragma once

// Subcommand dispatch for the fmstat CLI. Each subcommand reads a flat JSON
// object of parameters, runs one study from fmstat::experiments and writes
// CSV/SVG files plus manifest.json into the output directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fmstat/error.hpp"

namespace fmstat::cli {

inline constexpr int kSchemaVersion = 1;

struct RunOptions {
  std::string subcommand;
  nlohmann::json config = nlohmann::json::object();
  // Flag overrides; they win over the corresponding config keys.
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::size_t> reps;
  std::optional<int> threads;
};

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct RunManifest {
  std::string subcommand;
  nlohmann::json config;  // effective parameters, defaults included
  std::vector<StageTiming> timings;
  std::vector<std::string> files;  // relative to out_dir
  nlohmann::json columns = nlohmann::json::object();  // CSV file -> header
  nlohmann::json summary = nlohmann::json::object();
  std::filesystem::path out_dir;
  std::string library_version;
  int schema_version = kSchemaVersion;

  nlohmann::json to_json() const;
};

const std::vector<std::string>& subcommands();

/// Runs one subcommand. Configuration problems throw Error(ConfigInvalid);
/// any failure inside the study throws Error(ExperimentFailed) naming the
/// underlying code.
RunManifest run(const RunOptions& opts);

/// Reads a JSON config file. Throws ConfigInvalid.
nlohmann::json load_config(const std::filesystem::path& path);

/// {"error": {"code": ..., "message": ...}}
std::string error_json(const Error& e);
std::string error_json(ErrorCode code, const std::string& message);

}  // namespace fmstat::cli

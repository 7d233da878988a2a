#pragma once

// The `ssp` command line: data, check, train, predict, ensemble, evaluate and
// report. Every command exits 0 on success, 1 on an integrity or leakage
// finding, 2 on a usage error and 3 on a runtime failure.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssp/archzoo.hpp"
#include "ssp/data_ingest.hpp"
#include "ssp/train.hpp"

namespace ssp {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFinding = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

// Declarative description of one training run. Loaded from a JSON file and
// then overridden by command-line flags; anything left unset falls back to
// the presets.
struct RunConfig {
  std::string model = "A";
  std::string preset = "table1";  // "table1" or "smoke"
  std::string widths = "full";   // "full" or "reduced"
  // Named dataset bundle ("cb513" or "cb6133") resolved under data_dir.
  std::string data_preset;
  std::filesystem::path data_dir;
  std::filesystem::path train_path;
  std::filesystem::path validation_path;
  std::filesystem::path test_path;
  std::size_t limit = 0;  // keep only the first `limit` training records
  RawLayout layout;
  nlohmann::json arch_overrides = nlohmann::json::object();
  nlohmann::json train_overrides = nlohmann::json::object();
  std::optional<double> clip_grad_norm;
  std::optional<std::uint64_t> seed;
  bool allow_leakage = false;
  bool deterministic = false;
};

void to_json(nlohmann::json& j, const RunConfig& cfg);
void from_json(const nlohmann::json& j, RunConfig& cfg);

// Optimizer settings for the overfit smoke run: Adam at 0.003 without decay,
// batch 1, 40 epochs.
TrainConfig smoke_train_config();

struct ResolvedRun {
  ArchConfig arch;
  TrainConfig train;
  double clip_grad_norm = 0.0;
};

// Applies presets, then the overrides in `cfg`, then the seed. Throws
// ConfigError for unknown presets or invalid results.
ResolvedRun resolve_run(const RunConfig& cfg);

struct DatasetBundle {
  std::vector<ProteinRecord> train;
  std::vector<ProteinRecord> validation;
  std::vector<ProteinRecord> test;
  nlohmann::json input_hashes = nlohmann::json::object();  // file path -> sha256
};

// Loads the datasets a run refers to, applying the data preset split and the
// record limit.
DatasetBundle load_datasets(const RunConfig& cfg);

// Whole command line, argv[0] included.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ssp

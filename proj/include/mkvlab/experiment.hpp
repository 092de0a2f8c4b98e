#pragma once

#include "mkvlab/error.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mkv {

enum class ExperimentKind
{
  simulate_mkv,
  solve_fpe,
  frozen_compare,
  check_ck,
  ergodicity,
  feynman_kac,
  gradient_check,
  validate_hypotheses
};

const std::vector<std::string>& experiment_names();
std::string to_string(ExperimentKind k);

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitInvariant = 2;

//! Schema violations, all of them.
class ConfigError : public Error
{
public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

private:
  std::vector<std::string> problems_;
};

struct ExperimentConfig
{
  ExperimentKind kind = ExperimentKind::simulate_mkv;
  //! Defaults merged with the file, keys in schema order. Holds everything
  //! that affects results; the output directory is kept separately.
  nlohmann::ordered_json tree;
  std::string output_dir; //!< from the file; empty when unset
};

//! Defaults for one experiment, which double as its schema.
nlohmann::ordered_json default_config(ExperimentKind kind);

//! Every schema problem of a parsed document; empty when valid.
std::vector<std::string> validate_config(const nlohmann::json& doc);
//! Validates and resolves; throws ConfigError.
ExperimentConfig resolve_config(const nlohmann::json& doc);
//! Reads a JSON file (comments allowed) and resolves it.
ExperimentConfig load_config(const std::filesystem::path& path);

struct RunResult
{
  int exit_code = kExitOk;
  std::string summary;
  std::vector<std::string> artifacts;
};

//! Runs the experiment and publishes its artifacts into `out_dir`. Files are
//! written to a sibling staging directory first and moved into place only
//! after the run completes; on error nothing is left behind. An existing
//! `out_dir` is replaced only when it holds a previous manifest.json.
RunResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

} // namespace mkv

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gjem/data.hpp"
#include "gjem/mlp.hpp"
#include "gjem/trainer.hpp"

namespace gjem {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitDivergence = 3, kExitIo = 4 };

struct DataSource {
  std::filesystem::path path;  // .csv or dataset container
  std::optional<MixtureSpec> mixture;
  std::size_t n = 20000;
  std::vector<std::string> holdout;  // conditioning expressions
  double min_frequency = 0.0;
};

// Test-time chain lengths by initialization source.
struct SampleSettings {
  std::size_t noise_sweeps = 100;
  std::size_t buffer_sweeps = 20;
  std::size_t inner_steps = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataSource data;
  MlpSpec model;
  TrainConfig train;
  SampleSettings sample;
  std::filesystem::path output;
};

// Rejects unknown keys and invalid values with ConfigError. Model input
// dimension and attribute count are filled in once the data is known.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Loads or generates the dataset described by `src`, applies holdout and the
// validation split.
Dataset materialize_dataset(const DataSource& src, std::uint64_t seed);

// Checkpoint written by `train`: theta, the selected theta_hat, and the
// metadata needed to sample without the original config.
struct RunCheckpoint {
  MlpSpec spec;
  ParameterSet params;
  std::vector<std::string> names;
  UniformBox p0;
  LangevinConfig langevin;
  SampleSettings sample;
};
void save_run_checkpoint(const std::filesystem::path& path, const RunCheckpoint& ck);
RunCheckpoint load_run_checkpoint(const std::filesystem::path& path);

// Entry point shared by the gjem binary and the tests.
int run_cli(int argc, const char* const* argv);

}  // namespace gjem

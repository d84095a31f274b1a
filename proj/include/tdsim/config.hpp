#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdsim/channel.hpp"
#include "tdsim/data_io.hpp"
#include "tdsim/split_model.hpp"
#include "tdsim/train.hpp"

namespace tdsim {

struct EvalConfig {
  std::vector<double> snr_grid{-10.0, -5.0, 0.0, 5.0, 10.0};
  std::uint64_t seed = 42;
  double tau = 0.8;
  double eta = 1.0;
  double p = 0.5;
  double accuracy_weight = 0.5;
  double match_tol = 0.02;
  std::size_t jobs = 1;
};

struct DataConfig {
  std::string source = "synth";  // synth | csv
  std::size_t n_train_per_class = 300;
  std::size_t n_test_per_class = 200;
  double difficulty = 1.0;
  std::uint64_t seed = 7;
  std::optional<std::string> train_csv;
  std::optional<std::string> test_csv;
};

struct PathsConfig {
  std::string out_dir = "out";
};

struct RunConfig {
  BackboneConfig model;
  ChannelConfig channel;
  TrainConfig train;
  EvalConfig eval;
  DataConfig data;
  PathsConfig paths;

  void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);

// Merges `j` over the defaults. Unknown keys, wrong types and invalid values
// raise ConfigError naming the dotted key.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Applies "section.key=value" overrides; value is parsed as JSON when
// possible, otherwise taken as a string.
RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& assignments);

// Train and test splits as configured.
std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg);

}  // namespace tdsim

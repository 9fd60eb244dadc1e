// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrdm/bundle.hpp"
#include "lrdm/data_io.hpp"
#include "lrdm/samplers.hpp"
#include "lrdm/trainer.hpp"

namespace lrdm {

using Json = nlohmann::ordered_json;

/// Invalid configuration; the message starts with the dotted field path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Json to_json(const ScheduleConfig& c);
Json to_json(const ModelConfig& c);
/// Strict: unknown keys and wrongly-typed values throw ConfigError.
ScheduleConfig schedule_config_from_json(const Json& j, const std::string& path = "schedule");
ModelConfig model_config_from_json(const Json& j, const std::string& path = "model");

struct ScheduleSection {
  int T = 100;
  std::optional<double> beta1;  // null: default_linear_endpoints(T)
  std::optional<double> betaT;
  ScheduleConfig resolve() const;
};

struct TrainerSection {
  TrainConfig train;
  std::optional<double> dropout;  // null: 0.2 for dm, 0 otherwise
  double resolved_dropout(ModelKind kind) const;
};

struct SamplerSection {
  SamplerKind kind = SamplerKind::Ddim;
  int steps = 0;  // 0: every timestep
  std::uint64_t seed = 0;
  std::size_t n = 1000;
};

struct DataSection {
  std::string source = "mixture";  // mixture | csv
  MixtureSpec mixture;
  std::size_t heldout_n = 4096;
  std::uint64_t heldout_seed = 1;
  std::string path;          // csv source
  std::string heldout_path;  // csv source (optional)
};

struct AnalysisSection {
  std::vector<int> t_grid;  // empty: every timestep
  int n_mc = 4;
  std::size_t eval_n = 512;
  std::size_t null_resamples = 20;
  std::size_t energy_n = 2000;
  int ddim_steps = 0;  // 0: every timestep
  std::size_t interpolate_points = 10;
  std::uint64_t seed = 0;
};

struct RunConfig {
  ScheduleSection schedule;
  ModelConfig model;
  TrainerSection trainer;
  SamplerSection sampler;
  DataSection data;
  AnalysisSection analysis;

  /// Range checks across sections; throws ConfigError.
  void validate() const;
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);

/// Applies "a.b.c=value" overrides to a JSON document. The value is parsed
/// as JSON when possible and kept as a string otherwise.
void apply_override(Json& doc, const std::string& assignment);

/// Defaults, overlaid with the file (when given), then the overrides; fully
/// validated.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace lrdm

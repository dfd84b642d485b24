#pragma once

// JSON forms of the experiment configuration and of result records.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "himap/cost.hpp"
#include "himap/harness/dataset.hpp"
#include "himap/model.hpp"
#include "himap/perturb.hpp"
#include "himap/prune.hpp"

namespace himap::harness {

struct ExperimentConfig {
  ModelConfig model;
  SyntheticTaskSpec task;
  TrainSpec train;
  PruneSchedule schedule;
  std::string schedule_name = "none";
  std::optional<Intervention> intervention;
  std::string output_dir = "out";
  /// Fills model.init_seed, task.seed and train.seed when those are absent.
  std::uint64_t seed = 42;
  std::size_t train_count = 16000;
  std::size_t eval_count = 500;
  std::uint64_t train_split_seed = 1;
  std::uint64_t eval_split_seed = 2;

  /// Cross-field checks: task fits the vocabulary and the context window.
  void validate() const;
};

nlohmann::json to_json(const TrainSpec& t);
TrainSpec train_spec_from_json(const nlohmann::json& j, std::uint64_t default_seed);

nlohmann::json to_json(const PruneSchedule& s);
/// A preset name or {"stages": [{"filter_layer", "filter_ratio", "criterion"}]}.
PruneSchedule schedule_from_json(const nlohmann::json& j);
/// Preset name, or a path to a JSON schedule file.
PruneSchedule load_schedule(const std::string& preset_or_path);

nlohmann::json to_json(const Intervention& iv);
Intervention intervention_from_json(const nlohmann::json& j);

nlohmann::json to_json(const CostProfile& profile);

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace himap::harness

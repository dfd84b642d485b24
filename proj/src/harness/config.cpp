#include "himap/harness/config.hpp"

#include <fstream>
#include <sstream>

#include "himap/harness/checkpoint.hpp"

namespace himap::harness {

using nlohmann::json;

namespace {

template <typename T>
T field(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  task.validate();
  train.validate();
  schedule.validate(model.layers);
  if (intervention) intervention->validate(model.layers);
  if (task.vocab != model.vocab) {
    throw ConfigError("task vocab " + std::to_string(task.vocab) + " differs from model vocab " +
                      std::to_string(model.vocab));
  }
  if (task.sequence_length() > model.max_seq) {
    throw ConfigError("task sequence length " + std::to_string(task.sequence_length()) +
                      " exceeds max_seq " + std::to_string(model.max_seq));
  }
  if (train_count == 0 || eval_count == 0) throw ConfigError("train/eval counts must be >= 1");
  if (train_split_seed == eval_split_seed) {
    throw ConfigError("train and eval split seeds must differ");
  }
}

json to_json(const TrainSpec& t) {
  return json{{"steps", t.steps},
              {"batch", t.batch},
              {"learning_rate", t.learning_rate},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"grad_clip", t.grad_clip},
              {"seed", t.seed}};
}

TrainSpec train_spec_from_json(const json& j, std::uint64_t default_seed) {
  TrainSpec t;
  t.steps = field(j, "steps", t.steps);
  t.batch = field(j, "batch", t.batch);
  t.learning_rate = field(j, "learning_rate", t.learning_rate);
  t.beta1 = field(j, "beta1", t.beta1);
  t.beta2 = field(j, "beta2", t.beta2);
  t.adam_eps = field(j, "adam_eps", t.adam_eps);
  t.grad_clip = field(j, "grad_clip", t.grad_clip);
  t.seed = field(j, "seed", default_seed);
  t.validate();
  return t;
}

json to_json(const PruneSchedule& s) {
  json stages = json::array();
  for (const auto& st : s.stages) {
    stages.push_back({{"filter_layer", st.filter_layer},
                      {"filter_ratio", st.filter_ratio},
                      {"criterion", std::string(to_string(st.criterion))}});
  }
  return json{{"stages", stages}};
}

PruneSchedule schedule_from_json(const json& j) {
  if (j.is_string()) return PruneSchedule::preset(j.get<std::string>());
  if (!j.is_object() || !j.contains("stages")) {
    throw ConfigError("schedule must be a preset name or an object with 'stages'");
  }
  PruneSchedule s;
  for (const auto& st : j.at("stages")) {
    PruneStage stage;
    stage.filter_layer = field(st, "filter_layer", 0);
    stage.filter_ratio = field(st, "filter_ratio", 0.0);
    stage.criterion = parse_criterion(field<std::string>(st, "criterion", "phi_sh"));
    s.stages.push_back(stage);
  }
  return s;
}

PruneSchedule load_schedule(const std::string& preset_or_path) {
  if (std::filesystem::is_regular_file(preset_or_path)) {
    return schedule_from_json(read_json_file(preset_or_path));
  }
  return PruneSchedule::preset(preset_or_path);
}

json to_json(const Intervention& iv) {
  return json{{"kind", std::string(to_string(iv.kind))},
              {"layers", json(std::vector<int>(iv.layers.begin(), iv.layers.end()))},
              {"random_seed", iv.random_seed}};
}

Intervention intervention_from_json(const json& j) {
  Intervention iv;
  iv.kind = parse_intervention_kind(field<std::string>(j, "kind", "vt"));
  const auto layers = field<std::vector<int>>(j, "layers", {});
  iv.layers = std::set<int>(layers.begin(), layers.end());
  iv.random_seed = field<std::uint64_t>(j, "random_seed", 0);
  return iv;
}

json to_json(const CostProfile& p) {
  json breakdown = json::array();
  for (const auto& seg : p.breakdown) {
    breakdown.push_back({{"first_layer", seg.first_layer},
                         {"last_layer", seg.last_layer},
                         {"tokens", seg.tokens},
                         {"flops_per_layer", seg.flops_per_layer}});
  }
  return json{{"baseline_flops", p.baseline_flops},
              {"pruned_flops", p.pruned_flops},
              {"baseline_tflops", p.baseline_flops / 1e12},
              {"pruned_tflops", p.pruned_flops / 1e12},
              {"ratio", p.baseline_flops > 0 ? p.pruned_flops / p.baseline_flops : 0.0},
              {"eta", p.eta},
              {"breakdown", breakdown}};
}

json to_json(const ExperimentConfig& c) {
  json j{{"model", to_json(c.model)},
         {"task", to_json(c.task)},
         {"train", to_json(c.train)},
         {"schedule", c.schedule_name == "custom" ? to_json(c.schedule) : json(c.schedule_name)},
         {"output_dir", c.output_dir},
         {"seed", c.seed},
         {"train_count", c.train_count},
         {"eval_count", c.eval_count},
         {"train_split_seed", c.train_split_seed},
         {"eval_split_seed", c.eval_split_seed}};
  if (c.intervention) j["intervention"] = to_json(*c.intervention);
  return j;
}

ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c;
  c.seed = field<std::uint64_t>(j, "seed", c.seed);

  json model = j.value("model", json::object());
  if (!model.contains("init_seed")) model["init_seed"] = c.seed;
  try {
    c.model = model_config_from_json(model);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }

  json task = j.value("task", json::object());
  if (!task.contains("seed")) task["seed"] = c.seed;
  if (!task.contains("vocab")) task["vocab"] = c.model.vocab;
  c.task = task_spec_from_json(task);

  c.train = train_spec_from_json(j.value("train", json::object()), c.seed);

  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    c.schedule = schedule_from_json(s);
    c.schedule_name = s.is_string() ? s.get<std::string>() : "custom";
  }
  if (j.contains("intervention") && !j.at("intervention").is_null()) {
    c.intervention = intervention_from_json(j.at("intervention"));
  }
  c.output_dir = field<std::string>(j, "output_dir", c.output_dir);
  c.train_count = field<std::size_t>(j, "train_count", c.train_count);
  c.eval_count = field<std::size_t>(j, "eval_count", c.eval_count);
  c.train_split_seed = field<std::uint64_t>(j, "train_split_seed", c.train_split_seed);
  c.eval_split_seed = field<std::uint64_t>(j, "eval_split_seed", c.eval_split_seed);
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return experiment_from_json(read_json_file(path));
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

}  // namespace himap::harness

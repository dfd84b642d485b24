#include "himap/harness/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "himap/cost.hpp"
#include "himap/harness/checkpoint.hpp"
#include "himap/harness/config.hpp"
#include "himap/harness/dataset.hpp"
#include "himap/harness/evaluate.hpp"
#include "himap/perturb_sweep.hpp"
#include "himap/saliency.hpp"

namespace himap::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  return os;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::vector<SyntheticExample> load_data(const fs::path& path, std::size_t limit) {
  auto data = read_jsonl(path);
  if (data.empty()) throw ConfigError(path.string() + " holds no examples");
  if (limit > 0 && data.size() > limit) data.resize(limit);
  return data;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// gen-data ------------------------------------------------------------------

struct GenDataArgs {
  std::string spec;
  std::size_t count = 0;
  std::string out;
  std::uint64_t split_seed = 1;
  std::string name = "data.jsonl";
};

void run_gen_data(const GenDataArgs& a) {
  json j = read_json_file(a.spec);
  if (j.contains("task")) j = j.at("task");
  const SyntheticTaskSpec spec = task_spec_from_json(j);
  ensure_dir(a.out);
  write_jsonl(fs::path(a.out) / a.name, gen_dataset(spec, a.count, a.split_seed));
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::string data;
  std::string eval_data;
};

void run_train(const TrainArgs& a) {
  const ExperimentConfig cfg = load_experiment(a.config);
  const fs::path out = a.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.out);
  ensure_dir(out);

  const auto train_data = a.data.empty()
                              ? gen_dataset(cfg.task, cfg.train_count, cfg.train_split_seed)
                              : load_data(a.data, 0);
  const auto eval_data = a.eval_data.empty()
                             ? gen_dataset(cfg.task, cfg.eval_count, cfg.eval_split_seed)
                             : load_data(a.eval_data, 0);
  if (a.data.empty()) write_jsonl(out / "train.jsonl", train_data);
  if (a.eval_data.empty()) write_jsonl(out / "eval.jsonl", eval_data);

  const TrainResult result = train(build_model(cfg.model), train_data, cfg.train);
  save_checkpoint(result.params, out / "model.ckpt");

  auto loss_csv = open_out(out / "loss.csv");
  loss_csv << "step,loss\n";
  for (std::size_t s = 0; s < result.losses.size(); ++s) {
    loss_csv << s + 1 << "," << num(result.losses[s]) << "\n";
  }

  const AccuracyReport acc = evaluate_accuracy(result.params, eval_data);
  write_json_file(out / "config.json", to_json(cfg));
  write_json_file(out / "eval.json",
                  json{{"eval_accuracy", acc.accuracy()},
                       {"eval_correct", acc.correct},
                       {"eval_total", acc.total},
                       {"final_loss", result.losses.empty() ? 0.0 : result.losses.back()},
                       {"params_checksum", params_checksum(result.params)}});
}

// saliency ------------------------------------------------------------------

struct CommonArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  std::size_t limit = 0;
};

void run_saliency(const CommonArgs& a) {
  const ModelParams params = load_checkpoint(a.ckpt);
  const auto data = load_data(a.data, a.limit);
  ensure_dir(a.out);
  const auto profile = dataset_flow_profile(params, data);
  auto csv = open_out(fs::path(a.out) / "saliency.csv");
  csv << "layer,s_sys,s_img,s_ins,s_vv,s_vt,s_vt_receiver\n";
  for (const auto& p : profile) {
    csv << p.layer << "," << num(p.modality.sys) << "," << num(p.modality.img) << ","
        << num(p.modality.ins) << "," << num(p.flow.vv) << "," << num(p.flow.vt) << ","
        << num(p.flow.vt_receiver) << "\n";
  }
}

// perturb -------------------------------------------------------------------

struct PerturbArgs {
  CommonArgs common;
  std::string kind = "vt";
  std::string windows = "first2,last2";
  std::string basis = "score";
  std::uint64_t seed = 0;
};

void run_perturb(const PerturbArgs& a) {
  const ModelParams params = load_checkpoint(a.common.ckpt);
  const auto data = load_data(a.common.data, a.common.limit);
  const auto windows = parse_windows(a.windows, params.config.layers);
  SweepOptions opt;
  opt.random_seed = a.seed;
  if (a.basis == "score") {
    opt.basis = ConsistencyBasis::score;
  } else if (a.basis == "label") {
    opt.basis = ConsistencyBasis::label;
  } else {
    throw ConfigError("unknown consistency basis '" + a.basis + "' (score, label)");
  }

  const bool paired = a.kind == "paired";
  const auto rows = paired ? paired_sweep(params, data, windows, opt)
                           : layer_sweep(params, data, parse_intervention_kind(a.kind),
                                         windows, opt);
  ensure_dir(a.common.out);
  const fs::path out(a.common.out);

  auto csv = open_out(out / "consistency.csv");
  csv << "window_start,window_end,kind,c_label,c_score,e,d\n";
  for (const auto& r : rows) {
    csv << r.window.first << "," << r.window.last << "," << to_string(r.kind) << ","
        << num(r.c_label) << "," << num(r.c_score) << "," << num(r.e) << ","
        << (r.d ? num(*r.d) : "") << "\n";
  }

  auto bias = open_out(out / "bias.csv");
  bias << "window_start,window_end,e_vv,e_vt,d\n";
  for (std::size_t k = 0; k < rows.size();) {
    const auto& r = rows[k];
    std::string e_vv;
    std::string e_vt;
    std::string d = r.d ? num(*r.d) : "";
    if (paired) {
      e_vv = num(rows[k].e);
      e_vt = num(rows[k + 1].e);
      k += 2;
    } else {
      (r.kind == InterventionKind::vt_block ? e_vt : e_vv) = num(r.e);
      ++k;
    }
    bias << r.window.first << "," << r.window.last << "," << e_vv << "," << e_vt << "," << d
         << "\n";
  }
}

// prune-eval ----------------------------------------------------------------

struct PruneEvalArgs {
  CommonArgs common;
  std::string schedule = "toy-aggressive";
};

void run_prune_eval(const PruneEvalArgs& a) {
  const ModelParams params = load_checkpoint(a.common.ckpt);
  const auto data = load_data(a.common.data, a.common.limit);
  const PruneSchedule schedule = load_schedule(a.schedule);
  schedule.validate(params.config.layers);

  const AccuracyReport base = evaluate_accuracy(params, data);
  const AccuracyReport pruned = evaluate_accuracy(params, data, &schedule);
  const Index n_image = data.front().layout.img_len();
  const CostProfile cost = toy_model_cost(params.config, n_image, schedule);

  ensure_dir(a.common.out);
  const fs::path out(a.common.out);
  write_json_file(out / "cost.json", to_json(cost));
  write_json_file(out / "prune_eval.json",
                  json{{"schedule", to_json(schedule)},
                       {"examples", base.total},
                       {"accuracy_baseline", base.accuracy()},
                       {"accuracy_pruned", pruned.accuracy()},
                       {"drop_points", 100.0 * (base.accuracy() - pruned.accuracy())},
                       {"eta", cost.eta}});

  auto csv = open_out(out / "keep_map.csv");
  csv << "example,layer,count,positions\n";
  const std::size_t dumped = std::min<std::size_t>(data.size(), 8);
  for (std::size_t e = 0; e < dumped; ++e) {
    const auto keep = keep_map_for(params, data[e], schedule);
    for (std::size_t l = 0; l < keep.size(); ++l) {
      csv << e << "," << l << "," << keep[l].size() << ",";
      for (std::size_t k = 0; k < keep[l].size(); ++k) csv << (k ? " " : "") << keep[l][k];
      csv << "\n";
    }
  }
}

// cost ----------------------------------------------------------------------

struct CostArgs {
  std::string arch = "llava-7b";
  Index n_image = 576;
  std::string schedule = "aggressive";
  std::string out;
};

void run_cost(const CostArgs& a) {
  const ArchDims dims = arch_preset(a.arch);
  const PruneSchedule schedule = load_schedule(a.schedule);
  json j = to_json(schedule_cost(dims, a.n_image, schedule));
  j["arch"] = a.arch;
  j["n_image"] = a.n_image;
  if (a.out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_json_file(a.out, j);
  }
}

// ablate --------------------------------------------------------------------

struct AblateArgs {
  CommonArgs common;
  std::string grid;
};

std::map<std::string, std::vector<std::string>> parse_grid(const std::string& grid) {
  std::map<std::string, std::vector<std::string>> axes{{"k1", {"2"}}, {"r1", {"50"}},
                                                       {"c1", {"phi_sh"}}, {"k2", {"4"}},
                                                       {"r2", {"75"}}, {"c2", {"phi_dp"}}};
  for (const auto& part : split(grid, ';')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("grid axis '" + part + "' lacks '='");
    const std::string key = part.substr(0, eq);
    if (!axes.contains(key)) {
      throw ConfigError("unknown grid axis '" + key + "' (k1, r1, c1, k2, r2, c2)");
    }
    auto values = split(part.substr(eq + 1), ',');
    if (values.empty()) throw ConfigError("grid axis '" + key + "' has no values");
    axes[key] = values;
  }
  return axes;
}

int parse_int(const std::string& s, const char* what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw ConfigError(std::string("bad ") + what + " value '" + s + "'");
  return v;
}

double parse_double(const std::string& s, const char* what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw ConfigError(std::string("bad ") + what + " value '" + s + "'");
  return v;
}

void run_ablate(const AblateArgs& a) {
  const ModelParams params = load_checkpoint(a.common.ckpt);
  const auto data = load_data(a.common.data, a.common.limit);
  const auto axes = parse_grid(a.grid);
  const Index n_image = data.front().layout.img_len();
  const double base = evaluate_accuracy(params, data).accuracy();

  ensure_dir(a.common.out);
  auto csv = open_out(fs::path(a.common.out) / "ablate.csv");
  csv << "k1,r1,c1,k2,r2,c2,accuracy,baseline_accuracy,drop_points,eta\n";
  for (const auto& k1 : axes.at("k1")) {
    for (const auto& r1 : axes.at("r1")) {
      for (const auto& c1 : axes.at("c1")) {
        for (const auto& k2 : axes.at("k2")) {
          for (const auto& r2 : axes.at("r2")) {
            for (const auto& c2 : axes.at("c2")) {
              PruneStage s1{parse_int(k1, "k1"), parse_double(r1, "r1"), parse_criterion(c1)};
              PruneStage s2{parse_int(k2, "k2"), parse_double(r2, "r2"), parse_criterion(c2)};
              PruneSchedule schedule;
              // A stage with R = 0 is switched off.
              if (s1.filter_ratio > 0) schedule.stages.push_back(s1);
              if (s2.filter_ratio > 0) schedule.stages.push_back(s2);
              if (schedule.stages.size() == 2 && s2.filter_layer <= s1.filter_layer) continue;
              schedule.validate(params.config.layers);
              const double acc = evaluate_accuracy(params, data, &schedule).accuracy();
              const double eta = toy_model_cost(params.config, n_image, schedule).eta;
              csv << k1 << "," << r1 << "," << c1 << "," << k2 << "," << r2 << "," << c2 << ","
                  << num(acc) << "," << num(base) << "," << num(100.0 * (base - acc)) << ","
                  << num(eta) << "\n";
            }
          }
        }
      }
    }
  }
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
  CLI::App app{"Hierarchical modality-aware pruning toolkit on a toy multimodal transformer",
               "himap"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset (JSON lines)");
  gen_cmd->add_option("--spec", gen.spec, "Task spec or experiment config JSON")->required();
  gen_cmd->add_option("--count", gen.count, "Number of examples")
      ->required()
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--split-seed", gen.split_seed, "Split seed")->capture_default_str();
  gen_cmd->add_option("--name", gen.name, "Output file name")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model from an experiment config");
  train_cmd->add_option("--config", tr.config, "Experiment config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Output directory (default: config output_dir)");
  train_cmd->add_option("--data", tr.data, "Training JSONL (default: generated)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--eval-data", tr.eval_data, "Held-out JSONL (default: generated)")
      ->check(CLI::ExistingFile);

  auto add_common = [](CLI::App* cmd, CommonArgs& c) {
    cmd->add_option("--ckpt", c.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", c.data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    cmd->add_option("--limit", c.limit, "Use at most this many examples (0 = all)");
  };

  CommonArgs sal;
  auto* sal_cmd = app.add_subcommand("saliency", "Per-layer modality and flow saliency CSV");
  add_common(sal_cmd, sal);
  sal_cmd->add_option("--out", sal.out, "Output directory")->required();

  PerturbArgs per;
  auto* per_cmd = app.add_subcommand("perturb", "Attention-blocking consistency sweep");
  add_common(per_cmd, per.common);
  per_cmd->add_option("--out", per.common.out, "Output directory")->required();
  per_cmd->add_option("--kind", per.kind, "vt, vv, v_random or paired")->capture_default_str();
  per_cmd->add_option("--windows", per.windows, "Layer windows, e.g. first2,last2,every2,3-5")
      ->capture_default_str();
  per_cmd->add_option("--basis", per.basis, "Consistency feeding E: score or label")
      ->capture_default_str();
  per_cmd->add_option("--seed", per.seed, "Seed for random receivers")->capture_default_str();

  PruneEvalArgs pe;
  auto* pe_cmd = app.add_subcommand("prune-eval", "Accuracy with and without pruning");
  add_common(pe_cmd, pe.common);
  pe_cmd->add_option("--out", pe.common.out, "Output directory")->required();
  pe_cmd->add_option("--schedule", pe.schedule, "Preset name or schedule JSON")
      ->capture_default_str();

  CostArgs co;
  auto* cost_cmd = app.add_subcommand("cost", "Analytical FLOPs profile as JSON");
  cost_cmd->add_option("--arch", co.arch, "llava-7b, llava-13b or toy")->capture_default_str();
  cost_cmd->add_option("--n-image", co.n_image, "Image tokens")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cost_cmd->add_option("--schedule", co.schedule, "Preset name or schedule JSON")
      ->capture_default_str();
  cost_cmd->add_option("--out", co.out, "Write to this file instead of stdout");

  AblateArgs ab;
  auto* ab_cmd = app.add_subcommand("ablate", "Sweep over pruning schedule parameters");
  add_common(ab_cmd, ab.common);
  ab_cmd->add_option("--out", ab.common.out, "Output directory")->required();
  ab_cmd->add_option("--grid", ab.grid, "e.g. \"k1=1,2;r1=25,50;k2=4;r2=75;c1=phi_sh\"");

  std::vector<const char*> argv{"himap"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "himap: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*gen_cmd) run_gen_data(gen);
    if (*train_cmd) run_train(tr);
    if (*sal_cmd) run_saliency(sal);
    if (*per_cmd) run_perturb(per);
    if (*pe_cmd) run_prune_eval(pe);
    if (*cost_cmd) run_cost(co);
    if (*ab_cmd) run_ablate(ab);
  } catch (const std::exception& e) {
    std::cerr << "himap: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace himap::harness

// Command line front end: gen / train / eval / ablate / plot-traces.

#include <iostream>

#include "CLI11.hpp"
#include "ired/harness.hpp"

using namespace ired;

namespace {

struct Overrides {
  std::string config_path;
  std::string task;
  std::string output_dir;
  std::vector<std::string> sets;  // dotted.path=json
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> batch;
  std::optional<double> learning_rate;
  std::optional<double> contrastive_weight;
  std::vector<int> steps;
  std::vector<std::uint64_t> seeds;
};

void add_config_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "experiment config (JSON)");
  cmd->add_option("--task", o.task, "task family when no config is given");
  cmd->add_option("-o,--output-dir", o.output_dir, "output directory (relative paths resolve under $IRED_OUT)");
  cmd->add_option("--set", o.sets, "override a config entry, e.g. train.iterations=500");
  cmd->add_option("--iterations", o.iterations, "training iterations");
  cmd->add_option("--batch", o.batch, "training batch size");
  cmd->add_option("--learning-rate", o.learning_rate, "Adam learning rate");
  cmd->add_option("--contrastive-weight", o.contrastive_weight, "weight of the contrastive term");
  cmd->add_option("--T", o.steps, "steps per landscape to evaluate");
  cmd->add_option("--seeds", o.seeds, "training / solve seeds");
}

void set_path(json& doc, const std::string& dotted, json value) {
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

ExperimentConfig resolve(const Overrides& o) {
  json doc = json::object();
  if (!o.config_path.empty()) {
    doc = ExperimentConfig::load(o.config_path).to_json();
  } else if (!o.task.empty()) {
    doc["task"] = {{"family", o.task}};
  } else {
    throw CommandError("either --config or --task is required");
  }
  if (!o.task.empty()) doc["task"]["family"] = o.task;
  if (!o.output_dir.empty()) doc["output_dir"] = o.output_dir;
  if (o.iterations) set_path(doc, "train.iterations", *o.iterations);
  if (o.batch) set_path(doc, "train.batch", *o.batch);
  if (o.learning_rate) set_path(doc, "train.learning_rate", *o.learning_rate);
  if (o.contrastive_weight) set_path(doc, "train.contrastive_weight", *o.contrastive_weight);
  if (!o.steps.empty()) set_path(doc, "solve.steps", o.steps);
  if (!o.seeds.empty()) doc["seeds"] = o.seeds;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw CommandError("--set expects path=value, got '" + s + "'");
    const std::string value = s.substr(eq + 1);
    json parsed = json::parse(value, nullptr, false);
    set_path(doc, s.substr(0, eq), parsed.is_discarded() ? json(value) : parsed);
  }
  return ExperimentConfig::from_json(doc);
}

int report_error(const std::string& type, const std::string& message, const json& detail = json::object()) {
  json err = {{"type", type}, {"message", message}};
  for (const auto& [k, v] : detail.items()) err[k] = v;
  std::cerr << json{{"error", err}}.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-landscape reasoning: datasets, training, evaluation and ablations"};
  app.require_subcommand(1);

  Overrides o;
  auto* gen = app.add_subcommand("gen", "write train / test / harder datasets");
  add_config_flags(gen, o);

  auto* train = app.add_subcommand("train", "train one model per seed");
  add_config_flags(train, o);
  std::optional<std::uint64_t> train_seed;
  std::string resume;
  train->add_option("--seed", train_seed, "train only this seed");
  train->add_option("--resume", resume, "continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate checkpoints over the T grid");
  add_config_flags(eval, o);
  std::vector<std::string> checkpoints;
  std::string report_dir;
  eval->add_option("--checkpoint", checkpoints, "checkpoints to evaluate (default: seed_<s>/model.ckpt)");
  eval->add_option("--report-dir", report_dir, "where to write the report");

  auto* ablate = app.add_subcommand("ablate", "run the four-row ablation ladder");
  add_config_flags(ablate, o);

  auto* plot = app.add_subcommand("plot-traces", "export per-landscape energy curves");
  add_config_flags(plot, o);
  std::string plot_checkpoint, split = "harder";
  std::size_t count = 4;
  int plot_steps = 10;
  plot->add_option("--checkpoint", plot_checkpoint, "checkpoint to solve with")->required();
  plot->add_option("--split", split, "standard or harder")->check(CLI::IsMember({"standard", "harder"}));
  plot->add_option("--count", count, "instances to trace");
  plot->add_option("--steps", plot_steps, "steps per landscape");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error("usage", e.what());
  }

  try {
    const ExperimentConfig config = resolve(o);
    json result;
    if (gen->parsed()) {
      const GenOutput out = cmd_gen(config);
      result = {{"train", out.train.string()}, {"test", out.test.string()}, {"harder", out.harder.string()}};
    } else if (train->parsed()) {
      if (!resume.empty() && !train_seed) throw CommandError("--resume needs --seed");
      const std::vector<std::uint64_t> seeds = train_seed ? std::vector<std::uint64_t>{*train_seed} : config.seeds;
      result = json::array();
      for (std::uint64_t s : seeds) {
        const auto from = resume.empty() ? std::optional<fs::path>{} : std::optional<fs::path>{resume};
        const TrainOutput out = cmd_train(config, s, from);
        result.push_back({{"seed", s}, {"checkpoint", out.checkpoint.string()}, {"loss_csv", out.loss_csv.string()},
                          {"iterations", out.history.size()}});
      }
    } else if (eval->parsed()) {
      std::vector<fs::path> paths(checkpoints.begin(), checkpoints.end());
      if (paths.empty()) {
        for (std::uint64_t s : config.seeds) {
          paths.push_back(config.output_root() / ("seed_" + std::to_string(s)) / "model.ckpt");
        }
      }
      const EvalReport report = cmd_eval(config, paths, report_dir);
      result = report.to_json()["aggregate"];
    } else if (ablate->parsed()) {
      result = cmd_ablate(config).to_json()["summary"];
    } else if (plot->parsed()) {
      const fs::path dir = cmd_plot_traces(config, plot_checkpoint, difficulty_from_string(split), count, plot_steps);
      result = {{"traces", (dir / "traces.json").string()}, {"csv", (dir / "traces.csv").string()}};
    }
    std::cout << result.dump(2) << std::endl;
    return 0;
  } catch (const CommandError& e) {
    return report_error("command", e.what(), e.detail());
  } catch (const DivergenceError& e) {
    return report_error("divergence", e.what(), {{"iteration", e.iteration()}});
  } catch (const SolveError& e) {
    return report_error("solve", e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
}

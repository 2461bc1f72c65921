#include <chrono>
#include <charconv>
#include <cmath>
#include <map>

#include "ired/harness.hpp"

namespace ired {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

fs::path data_dir(const ExperimentConfig& c) { return c.output_root() / "data"; }

std::pair<double, double> mean_stddev(const std::vector<double>& v) {
  if (v.empty()) return {0, 0};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

// Rejects a model whose input/output widths do not fit the instances.
void check_compatible(const EnergyModel& m, const ProblemInstance& inst, const fs::path& checkpoint) {
  try {
    const std::vector<int> level = {1};
    m.energies(Tensor::constant({1, inst.x.size()}, inst.x), Tensor::constant({1, inst.y_star.size()}, inst.y_star),
               level);
  } catch (const ShapeError& e) {
    throw CommandError("checkpoint " + checkpoint.string() + " does not fit " + to_string(inst.kind.family) +
                           " instances: " + e.what(),
                       {{"path", checkpoint.string()}});
  }
}

std::vector<ProblemInstance> load_split(const ExperimentConfig& c, const char* name) {
  return read_dataset(data_dir(c) / (std::string(name) + ".jsonl"));
}

void write_loss_csv(const fs::path& path, const std::vector<LossRecord>& history) {
  std::string text = "iteration,loss_mse,loss_contrast\n";
  for (const auto& r : history) text += std::to_string(r.iteration) + "," + num(r.mse) + "," + num(r.contrast) + "\n";
  write_text(path, text);
}

std::vector<LossRecord> read_loss_csv(const fs::path& path, std::uint64_t before) {
  std::vector<LossRecord> out;
  if (!fs::exists(path)) return out;
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    LossRecord r;
    const auto a = line.find(','), b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) continue;
    r.iteration = std::stoull(line.substr(0, a));
    r.mse = std::stod(line.substr(a + 1, b - a - 1));
    r.contrast = std::stod(line.substr(b + 1));
    if (r.iteration < before) out.push_back(r);
  }
  return out;
}

}  // namespace

// ---- evaluation -------------------------------------------------------------------------

SplitScore evaluate(const EnergyModel& m, std::span<const ProblemInstance> data, const NoiseSchedule& schedule,
                    const SolveConfig& solve, std::size_t batch) {
  SplitScore score;
  if (data.empty()) return score;
  batch = std::max<std::size_t>(batch, 1);
  const std::size_t width = data.front().y_star.size();
  const bool graph_exact = data.front().kind.family == TaskFamily::kConnectivity;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const auto chunk = data.subspan(start, std::min(batch, data.size() - start));
    const Tensor y = anneal_solve(m, stack_x(chunk), width, schedule, solve, start);
    const auto values = y.data();
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto pred = discretize(values.subspan(r * width, width), chunk[r].kind);
      const double value = metric(chunk[r], pred);
      score.metric += value;
      score.exact_match += graph_exact ? graph_exact_match(chunk[r], pred) : value;
    }
  }
  score.count = data.size();
  score.metric /= static_cast<double>(data.size());
  score.exact_match /= static_cast<double>(data.size());
  return score;
}

std::vector<ReportAggregate> EvalReport::aggregate() const {
  std::map<std::pair<std::string, int>, std::vector<double>> groups;
  std::vector<std::pair<std::string, int>> order;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.difficulty, r.steps);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(r.metric);
  }
  std::vector<ReportAggregate> out;
  for (const auto& key : order) {
    const auto [mean, stddev] = mean_stddev(groups[key]);
    out.push_back({key.first, key.second, mean, stddev, groups[key].size()});
  }
  return out;
}

json EvalReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"difficulty", r.difficulty},
                      {"T", r.steps},
                      {"seed", r.seed},
                      {"metric", r.metric},
                      {"exact_match", r.exact_match},
                      {"count", r.count}});
  }
  json agg = json::array();
  for (const auto& a : aggregate()) {
    agg.push_back({{"difficulty", a.difficulty}, {"T", a.steps}, {"mean", a.mean}, {"stddev", a.stddev},
                   {"seeds", a.seeds}});
  }
  return {{"config_hash", config_hash}, {"task", task}, {"rows", rows_j}, {"aggregate", agg}};
}

std::string EvalReport::to_csv() const {
  std::string text = "difficulty,T,seed,metric,exact_match,count\n";
  for (const auto& r : rows) {
    text += r.difficulty + "," + std::to_string(r.steps) + "," + std::to_string(r.seed) + "," + num(r.metric) + "," +
            num(r.exact_match) + "," + std::to_string(r.count) + "\n";
  }
  return text;
}

json EvalReport::timing() const {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"difficulty", r.difficulty}, {"T", r.steps}, {"seed", r.seed}, {"seconds", r.seconds}});
  }
  return {{"config_hash", config_hash}, {"rows", out}};
}

std::pair<double, double> AblationReport::summary(int row, const std::string& difficulty) const {
  std::vector<double> values;
  for (const auto& r : rows) {
    if (r.row == row && r.difficulty == difficulty) values.push_back(r.metric);
  }
  return mean_stddev(values);
}

json AblationReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"row", r.row},
                      {"label", r.label},
                      {"gradient_descent", r.flags.gradient_descent},
                      {"refinement", r.flags.refinement},
                      {"contrastive", r.flags.contrastive},
                      {"config_hash", r.config_hash},
                      {"noisy", r.noisy},
                      {"T", r.steps},
                      {"seed", r.seed},
                      {"difficulty", r.difficulty},
                      {"metric", r.metric}});
  }
  json summary_j = json::array();
  for (int row = 1; row <= 4; ++row) {
    for (const char* d : {"standard", "harder"}) {
      const auto [mean, stddev] = summary(row, d);
      summary_j.push_back({{"row", row}, {"difficulty", d}, {"mean", mean}, {"stddev", stddev}});
    }
  }
  return {{"task", task}, {"rows", rows_j}, {"summary", summary_j}};
}

std::string AblationReport::to_csv() const {
  std::string text = "row,label,gradient_descent,refinement,contrastive,T,seed,difficulty,metric,config_hash\n";
  for (const auto& r : rows) {
    text += std::to_string(r.row) + "," + r.label + "," + (r.flags.gradient_descent ? "1" : "0") + "," +
            (r.flags.refinement ? "1" : "0") + "," + (r.flags.contrastive ? "1" : "0") + "," +
            std::to_string(r.steps) + "," + std::to_string(r.seed) + "," + r.difficulty + "," + num(r.metric) + "," +
            r.config_hash + "\n";
  }
  return text;
}

std::vector<ExperimentConfig> ablation_ladder(const ExperimentConfig& base) {
  std::vector<ExperimentConfig> out;
  const std::array<std::array<bool, 3>, 4> flags = {{
      {false, false, false},
      {true, false, false},
      {true, true, false},
      {true, true, true},
  }};
  for (const auto& f : flags) {
    ExperimentConfig c = base;
    c.ablation.gradient_descent = f[0];
    c.ablation.refinement = f[1];
    c.ablation.contrastive = f[2];
    out.push_back(c);
  }
  return out;
}

// ---- commands --------------------------------------------------------------------------

GenOutput cmd_gen(const ExperimentConfig& config) {
  config.validate();
  const fs::path dir = data_dir(config);
  GenOutput out{dir / "train.jsonl", dir / "test.jsonl", dir / "harder.jsonl"};
  struct Split {
    const fs::path& path;
    Difficulty difficulty;
    std::size_t count;
    std::uint64_t stream;
  };
  const Split splits[] = {{out.train, Difficulty::kStandard, config.data.train, 0},
                          {out.test, Difficulty::kStandard, config.data.test, 1},
                          {out.harder, Difficulty::kHarder, config.data.harder, 2}};
  for (const auto& s : splits) {
    const std::uint64_t seed = derive_seed(config.data.seed, {s.stream});
    const auto instances = config.task.generate(s.difficulty, s.count, seed);
    const json header = {{"task", to_string(config.task.family)},
                         {"difficulty", to_string(s.difficulty)},
                         {"count", s.count},
                         {"seed", seed},
                         {"config_hash", config.hash()}};
    write_dataset(s.path, instances, header);
  }
  return out;
}

TrainOutput cmd_train(const ExperimentConfig& config, std::uint64_t seed, const std::optional<fs::path>& resume,
                      const fs::path& subdir) {
  config.validate();
  const auto data = load_split(config, "train");
  if (data.empty()) throw CommandError("training set is empty", {{"path", (data_dir(config) / "train.jsonl").string()}});
  const fs::path dir = config.output_root() / subdir / ("seed_" + std::to_string(seed));
  const NoiseSchedule schedule = config.schedule();
  const std::string hash = config.hash();
  TrainConfig train = config.effective_train();
  train.seed = seed;

  std::unique_ptr<NetworkEnergy> model;
  AdamState adam;
  std::uint64_t start = 0;
  if (resume) {
    Checkpoint c = load_checkpoint(*resume);
    if (c.config_hash != hash) {
      throw CommandError("resume: checkpoint config hash " + c.config_hash + " does not match " + hash,
                         {{"path", resume->string()}, {"expected", hash}, {"found", c.config_hash}});
    }
    if (c.seed != seed) {
      throw CommandError("resume: checkpoint seed " + std::to_string(c.seed) + " differs from " + std::to_string(seed),
                         {{"path", resume->string()}});
    }
    if (!c.adam) throw CommandError("resume: checkpoint has no optimizer state", {{"path", resume->string()}});
    model = std::move(c.model);
    adam = std::move(*c.adam);
    start = c.iteration;
  } else {
    model = build(config.model_spec(), seed);
    adam = AdamState::for_model(*model);
  }
  check_compatible(*model, data.front(), resume.value_or(dir));

  std::optional<fs::path> last;
  auto hook = [&](std::uint64_t done, const EnergyModel&, const AdamState& state) {
    const fs::path p = dir / ("checkpoint_" + std::to_string(done) + ".ckpt");
    save_checkpoint(p, *model, schedule, done, seed, hash, &state);
    last = p;
  };

  TrainOutput out;
  out.loss_csv = dir / "loss.csv";
  out.history = start > 0 ? read_loss_csv(out.loss_csv, start) : std::vector<LossRecord>{};
  try {
    const auto history = ired::train(*model, adam, data, train, schedule, start, hook);
    out.history.insert(out.history.end(), history.begin(), history.end());
  } catch (const DivergenceError& e) {
    json detail = {{"iteration", e.iteration()}};
    detail["last_checkpoint"] = last ? json(last->string()) : json(resume ? json(resume->string()) : json(nullptr));
    throw CommandError(e.what(), detail);
  }
  out.checkpoint = dir / "model.ckpt";
  save_checkpoint(out.checkpoint, *model, schedule, std::max<std::uint64_t>(start, train.iterations), seed, hash,
                  &adam);
  write_loss_csv(out.loss_csv, out.history);
  return out;
}

EvalReport cmd_eval(const ExperimentConfig& config, std::span<const fs::path> checkpoints, const fs::path& report_dir) {
  config.validate();
  if (checkpoints.empty()) throw CommandError("eval: no checkpoint given");
  const std::vector<std::pair<std::string, std::vector<ProblemInstance>>> splits = {
      {"standard", load_split(config, "test")}, {"harder", load_split(config, "harder")}};
  EvalReport report;
  report.config_hash = config.hash();
  report.task = to_string(config.task.family);
  for (const auto& path : checkpoints) {
    const Checkpoint c = load_checkpoint(path);
    const NoiseSchedule schedule = NoiseSchedule::from_alpha_bar(c.alpha_bar);
    for (const auto& [name, data] : splits) {
      if (!data.empty()) check_compatible(*c.model, data.front(), path);
      for (int steps : config.solve.steps) {
        const auto t0 = Clock::now();
        const SplitScore s = evaluate(*c.model, data, schedule, config.solve_config(steps, c.seed), config.solve.batch);
        report.rows.push_back({name, steps, c.seed, s.metric, s.exact_match, s.count, seconds_since(t0)});
      }
    }
  }
  const fs::path dir = report_dir.empty() ? config.output_root() / "eval" : report_dir;
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  write_text(dir / "report.csv", report.to_csv());
  write_text(dir / "timing.json", report.timing().dump(2) + "\n");
  return report;
}

AblationReport cmd_ablate(const ExperimentConfig& config) {
  config.validate();
  const auto ladder = ablation_ladder(config);
  const char* labels[] = {"noisy_reverse", "gradient_descent_T1", "refinement", "contrastive"};
  const std::vector<std::pair<std::string, std::vector<ProblemInstance>>> splits = {
      {"standard", load_split(config, "test")}, {"harder", load_split(config, "harder")}};
  const NoiseSchedule schedule = config.schedule();

  AblationReport report;
  report.task = to_string(config.task.family);
  json timing = json::array();
  for (std::uint64_t seed : config.seeds) {
    // Rows 1-3 share the model trained without contrastive shaping.
    const TrainOutput plain = cmd_train(ladder[2], seed, {}, "ablation/no_contrastive");
    const TrainOutput full = cmd_train(ladder[3], seed, {}, "ablation/contrastive");
    const Checkpoint models[] = {load_checkpoint(plain.checkpoint), load_checkpoint(full.checkpoint)};
    for (int row = 0; row < 4; ++row) {
      const ExperimentConfig& c = ladder[static_cast<std::size_t>(row)];
      const EnergyModel& m = *models[row == 3 ? 1 : 0].model;
      const int steps = c.ablation.refinement ? c.ablation.steps : 1;
      for (const auto& [name, data] : splits) {
        const auto t0 = Clock::now();
        const SplitScore s = evaluate(m, data, schedule, c.solve_config(steps, seed), c.solve.batch);
        AblationRow r;
        r.row = row + 1;
        r.label = labels[row];
        r.flags = c.ablation;
        r.config_hash = c.hash();
        r.noisy = !c.ablation.gradient_descent;
        r.steps = steps;
        r.seed = seed;
        r.difficulty = name;
        r.metric = s.metric;
        r.seconds = seconds_since(t0);
        timing.push_back({{"row", r.row}, {"seed", seed}, {"difficulty", name}, {"seconds", r.seconds}});
        report.rows.push_back(std::move(r));
      }
    }
  }
  const fs::path dir = config.output_root() / "ablation";
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  write_text(dir / "report.csv", report.to_csv());
  write_text(dir / "timing.json", json{{"rows", timing}}.dump(2) + "\n");
  return report;
}

fs::path cmd_plot_traces(const ExperimentConfig& config, const fs::path& checkpoint, Difficulty split,
                         std::size_t count, int steps) {
  config.validate();
  auto data = load_split(config, split == Difficulty::kStandard ? "test" : "harder");
  data.resize(std::min(count, data.size()));
  if (data.empty()) throw CommandError("plot-traces: no instances to solve");
  const Checkpoint c = load_checkpoint(checkpoint);
  check_compatible(*c.model, data.front(), checkpoint);
  const NoiseSchedule schedule = NoiseSchedule::from_alpha_bar(c.alpha_bar);
  std::vector<SolveTrace> traces;
  const Tensor y = anneal_solve(*c.model, stack_x(data), data.front().y_star.size(), schedule,
                                config.solve_config(steps, c.seed), 0, &traces);

  json all = json::array();
  std::string csv = "instance,level,step,energy_before,energy_after,accepted\n";
  for (std::size_t i = 0; i < traces.size(); ++i) {
    json t = traces[i].to_json();
    t["instance"] = i;
    all.push_back(std::move(t));
    for (const auto& l : traces[i].landscapes) {
      for (const auto& s : l.steps) {
        csv += std::to_string(i) + "," + std::to_string(l.level) + "," + std::to_string(s.step) + "," +
               num(s.energy_before) + "," + num(s.energy_after) + "," + (s.accepted ? "1" : "0") + "\n";
      }
    }
  }
  const fs::path dir = config.output_root() / "traces";
  write_text(dir / "traces.json",
             json{{"config_hash", config.hash()}, {"split", to_string(split)}, {"T", steps}, {"traces", all}}.dump() +
                 "\n");
  write_text(dir / "traces.csv", csv);
  return dir;
}

}  // namespace ired

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ired/energy.hpp"
#include "ired/inference.hpp"
#include "ired/tasks.hpp"
#include "ired/training.hpp"

#include "json.hpp"

namespace ired {

namespace fs = std::filesystem;
using nlohmann::json;

// Failure raised by the harness commands. detail is merged into the error
// JSON printed by the CLI.
class CommandError : public std::runtime_error {
 public:
  CommandError(const std::string& what, json detail = json::object())
      : std::runtime_error(what), detail_(std::move(detail)) {}
  const json& detail() const { return detail_; }

 private:
  json detail_;
};

// ---- configuration ------------------------------------------------------------------

// Generator knobs that differ between the standard and harder splits.
struct SplitParams {
  double magnitude = 1.0;  // addition
  double condition = 4.0;  // inverse
  double uv_scale = 1.0;   // completion
  int givens_min = 8;      // sudoku
  int givens_max = 12;
  std::size_t nodes = 8;   // connectivity / shortest path
};

struct TaskConfig {
  TaskFamily family = TaskFamily::kAddition;
  std::size_t n = 8;
  std::size_t rank = 2;
  std::size_t order = 2;
  std::size_t horizon = 8;
  double mask_frac = 0.5;
  std::size_t max_out_degree = 0;  // graphs; 0 means n/2
  SplitParams standard;
  SplitParams harder;

  TaskKind kind(Difficulty d) const;
  std::vector<ProblemInstance> generate(Difficulty d, std::size_t count, std::uint64_t seed) const;
};

struct ModelConfig {
  Architecture arch = Architecture::kMlpEnergy;
  std::size_t width = 128;
  std::size_t depth = 3;
};

struct SolveGrid {
  std::vector<int> steps = {10};  // T values evaluated
  double step_scale = 1.0;
  bool acceptance_check = true;
  bool polish = false;
  std::size_t batch = 64;  // instances solved together
};

struct DataConfig {
  std::size_t train = 2000;
  std::size_t test = 200;
  std::size_t harder = 200;
  std::uint64_t seed = 1;
};

// Mechanisms switched off in ablation rows. refinement off means T = 1,
// gradient_descent off means the noisy reverse process.
struct AblationFlags {
  bool gradient_descent = true;
  bool refinement = true;
  bool contrastive = true;
  int steps = 10;  // T used by rows with refinement on

  bool operator==(const AblationFlags&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  TaskConfig task;
  ModelConfig model;
  int levels = 10;
  TrainConfig train;
  SolveGrid solve;
  DataConfig data;
  std::vector<std::uint64_t> seeds = {0};
  AblationFlags ablation;
  std::string output_dir = "runs";

  // Desk-scale defaults for a task family.
  static ExperimentConfig defaults(TaskFamily family);
  // Starts from defaults(task.family) and applies the document. Unknown keys
  // and wrong types are rejected with the offending path.
  static ExperimentConfig from_json(const json& doc);
  static ExperimentConfig load(const fs::path& path);
  json to_json() const;
  void validate() const;

  // FNV-1a 64 of the canonical JSON without output_dir, as 16 hex digits.
  std::string hash() const;

  ModelSpec model_spec() const;
  NoiseSchedule schedule() const { return NoiseSchedule::cosine(levels); }
  // The config with ablation flags applied to the train and solve settings.
  TrainConfig effective_train() const;
  SolveConfig solve_config(int steps, std::uint64_t seed) const;
  // output_dir, prefixed by $IRED_OUT when it is relative and the variable is set.
  fs::path output_root() const;
};

std::string fnv1a_hex(std::string_view bytes);

// ---- datasets -------------------------------------------------------------------------
// JSON lines. The first line is "# ired-dataset 1 " followed by a JSON header;
// every other line is one instance.

void write_dataset(const fs::path& path, std::span<const ProblemInstance> instances, const json& header);
std::vector<ProblemInstance> read_dataset(const fs::path& path);
json instance_to_json(const ProblemInstance& inst);
ProblemInstance instance_from_json(const json& j);

// ---- checkpoints ----------------------------------------------------------------------
// "IREDCKPT", u32 version, u64 header length, JSON header, then float64
// little-endian arrays: parameters in header order, then Adam first and
// second moments when present.

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelSpec spec;
  std::vector<double> alpha_bar;
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::unique_ptr<NetworkEnergy> model;
  std::optional<AdamState> adam;

  // Digest of the stream the next iteration would draw from.
  std::string rng_digest() const;
};

void save_checkpoint(const fs::path& path, const NetworkEnergy& model, const NoiseSchedule& schedule,
                     std::uint64_t iteration, std::uint64_t seed, const std::string& config_hash,
                     const AdamState* adam);
Checkpoint load_checkpoint(const fs::path& path);

// ---- evaluation ---------------------------------------------------------------------

struct SplitScore {
  double metric = 0;       // mean task metric
  double exact_match = 0;  // connectivity: whole graph correct; else equals metric for discrete tasks
  std::size_t count = 0;
};

// Solves every instance (batches of `batch`, instance i drawing its start from
// the solve seed and i) and averages the task metric.
SplitScore evaluate(const EnergyModel& m, std::span<const ProblemInstance> data, const NoiseSchedule& schedule,
                    const SolveConfig& solve, std::size_t batch);

struct ReportRow {
  std::string difficulty;
  int steps = 0;
  std::uint64_t seed = 0;
  double metric = 0;
  double exact_match = 0;
  std::size_t count = 0;
  double seconds = 0;  // wall clock; kept out of the report files
};

struct ReportAggregate {
  std::string difficulty;
  int steps = 0;
  double mean = 0;
  double stddev = 0;  // population stddev over seeds
  std::size_t seeds = 0;
};

struct EvalReport {
  std::string config_hash;
  std::string task;
  std::vector<ReportRow> rows;

  std::vector<ReportAggregate> aggregate() const;
  json to_json() const;
  std::string to_csv() const;
  json timing() const;
};

struct AblationRow {
  int row = 0;  // 1..4
  std::string label;
  AblationFlags flags;
  std::string config_hash;
  bool noisy = false;
  int steps = 0;
  std::uint64_t seed = 0;
  std::string difficulty;
  double metric = 0;
  double seconds = 0;
};

struct AblationReport {
  std::string task;
  std::vector<AblationRow> rows;

  // Mean and stddev of the metric per (row, difficulty).
  std::pair<double, double> summary(int row, const std::string& difficulty) const;
  json to_json() const;
  std::string to_csv() const;
};

// The four ablation configurations in ladder order: noisy reverse process,
// gradient descent with T = 1, with T > 1, and with contrastive shaping.
std::vector<ExperimentConfig> ablation_ladder(const ExperimentConfig& base);

// ---- commands ----------------------------------------------------------------------

struct GenOutput {
  fs::path train, test, harder;
};

// Writes data/{train,test,harder}.jsonl under the output root.
GenOutput cmd_gen(const ExperimentConfig& config);

struct TrainOutput {
  fs::path checkpoint;
  fs::path loss_csv;
  std::vector<LossRecord> history;
};

// Trains one seed from data/train.jsonl into seed_<s>/. With resume, training
// continues from that checkpoint, whose config hash must match.
TrainOutput cmd_train(const ExperimentConfig& config, std::uint64_t seed, const std::optional<fs::path>& resume = {},
                      const fs::path& subdir = {});

// Evaluates every checkpoint on data/test.jsonl and data/harder.jsonl for each
// T in the grid and writes report.json, report.csv and timing.json.
EvalReport cmd_eval(const ExperimentConfig& config, std::span<const fs::path> checkpoints,
                    const fs::path& report_dir = {});

// Trains the no-contrastive and full models per seed and evaluates the four
// ladder rows on both splits. Writes ablation/report.{json,csv}.
AblationReport cmd_ablate(const ExperimentConfig& config);

// Solves the first `count` instances of a split with traces and writes
// traces.json and traces.csv (instance, level, step, energies, accepted).
fs::path cmd_plot_traces(const ExperimentConfig& config, const fs::path& checkpoint, Difficulty split,
                         std::size_t count, int steps);

// Writes through path.tmp and a rename.
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace ired

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "ired/harness.hpp"

namespace ired {

namespace {

bool is_graph(TaskFamily f) { return f == TaskFamily::kConnectivity || f == TaskFamily::kShortestPath; }

// Walks one JSON object, checking key names and value types.
class Reader {
 public:
  Reader(const json& j, std::string path, std::initializer_list<const char*> keys) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      if (!allowed.count(k)) fail(path_ + "." + k, "unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return path_ + "." + key; }

  void read(const char* key, bool& out) const {
    if (!has(key)) return;
    if (!at(key).is_boolean()) fail(path(key), "expected a boolean");
    out = at(key).get<bool>();
  }
  void read(const char* key, double& out) const {
    if (!has(key)) return;
    if (!at(key).is_number()) fail(path(key), "expected a number");
    out = at(key).get<double>();
  }
  void read(const char* key, int& out) const {
    if (!has(key)) return;
    if (!at(key).is_number_integer()) fail(path(key), "expected an integer");
    out = at(key).get<int>();
  }
  void read(const char* key, std::size_t& out) const {
    if (!has(key)) return;
    if (!non_negative_integer(at(key))) fail(path(key), "expected a non-negative integer");
    out = at(key).get<std::size_t>();
  }
  void read(const char* key, std::string& out) const {
    if (!has(key)) return;
    if (!at(key).is_string()) fail(path(key), "expected a string");
    out = at(key).get<std::string>();
  }
  template <typename T>
  void read_list(const char* key, std::vector<T>& out) const {
    if (!has(key)) return;
    const json& a = at(key);
    if (!a.is_array()) fail(path(key), "expected an array");
    out.clear();
    for (const auto& v : a) {
      const bool ok = std::is_signed_v<T> ? v.is_number_integer() : non_negative_integer(v);
      if (!ok) fail(path(key), "expected an array of integers");
      out.push_back(v.get<T>());
    }
  }

  static bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw CommandError("config: " + where + ": " + what, {{"path", where}});
  }

 private:
  const json& j_;
  std::string path_;
};

void read_split(const Reader& parent, const char* key, SplitParams& s) {
  if (!parent.has(key)) return;
  Reader r(parent.at(key), parent.path(key), {"magnitude", "condition", "uv_scale", "givens_min", "givens_max", "nodes"});
  r.read("magnitude", s.magnitude);
  r.read("condition", s.condition);
  r.read("uv_scale", s.uv_scale);
  r.read("givens_min", s.givens_min);
  r.read("givens_max", s.givens_max);
  r.read("nodes", s.nodes);
}

json split_json(const SplitParams& s) {
  return {{"magnitude", s.magnitude}, {"condition", s.condition},   {"uv_scale", s.uv_scale},
          {"givens_min", s.givens_min}, {"givens_max", s.givens_max}, {"nodes", s.nodes}};
}

void validate_split(const SplitParams& s, const std::string& name) {
  auto bad = [&](const std::string& what) { Reader::fail("task." + name, what); };
  if (!(s.magnitude > 0)) bad("magnitude must be > 0");
  if (!(s.condition >= 1)) bad("condition must be >= 1");
  if (!(s.uv_scale > 0)) bad("uv_scale must be > 0");
  if (s.givens_min < 0 || s.givens_min > s.givens_max) bad("need 0 <= givens_min <= givens_max");
  if (s.nodes < 2) bad("nodes must be >= 2");
}

}  // namespace

TaskKind TaskConfig::kind(Difficulty d) const {
  TaskKind k;
  k.family = family;
  k.n = is_graph(family) ? (d == Difficulty::kStandard ? standard : harder).nodes : n;
  k.rank = rank;
  k.order = order;
  k.horizon = horizon;
  return k;
}

std::vector<ProblemInstance> TaskConfig::generate(Difficulty d, std::size_t count, std::uint64_t seed) const {
  const SplitParams& s = d == Difficulty::kStandard ? standard : harder;
  std::vector<ProblemInstance> out;
  switch (family) {
    case TaskFamily::kAddition:
      out = gen_addition(n, s.magnitude, count, seed);
      break;
    case TaskFamily::kCompletion:
      out = gen_completion(n, rank, mask_frac, s.uv_scale, count, seed);
      break;
    case TaskFamily::kInverse:
      out = gen_inverse(n, s.condition, count, seed);
      break;
    case TaskFamily::kSudoku:
      out = gen_sudoku(order, s.givens_min, s.givens_max, count, seed);
      break;
    case TaskFamily::kConnectivity:
      out = gen_connectivity(s.nodes, count, seed, max_out_degree);
      break;
    case TaskFamily::kShortestPath:
      out = gen_shortest_path(s.nodes, horizon, count, seed, max_out_degree);
      break;
  }
  for (auto& inst : out) inst.difficulty = d;
  return out;
}

ExperimentConfig ExperimentConfig::defaults(TaskFamily family) {
  ExperimentConfig c;
  c.name = to_string(family);
  c.task.family = family;
  c.output_dir = "runs/" + c.name;
  c.train.batch = 32;
  c.train.learning_rate = 1e-3;
  c.train.iterations = 20000;
  c.solve.steps = {10, 40};
  switch (family) {
    case TaskFamily::kAddition:
      c.task.harder.magnitude = 2.0;
      break;
    case TaskFamily::kCompletion:
      c.task.harder.uv_scale = 1.5;
      break;
    case TaskFamily::kInverse:
      c.task.harder.condition = 16.0;
      break;
    case TaskFamily::kSudoku:
      c.task.standard.givens_min = 8;
      c.task.standard.givens_max = 12;
      c.task.harder.givens_min = 5;
      c.task.harder.givens_max = 8;
      c.model = {Architecture::kBoardEnergy, 32, 3};
      c.solve.steps = {5, 20, 50};
      break;
    case TaskFamily::kConnectivity:
      c.task.standard.nodes = 8;
      c.task.harder.nodes = 12;
      c.model = {Architecture::kEdgeRelationalEnergy, 32, 3};
      break;
    case TaskFamily::kShortestPath:
      c.task.standard.nodes = 8;
      c.task.harder.nodes = 12;
      c.model = {Architecture::kPlanRelationalEnergy, 32, 3};
      break;
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  Reader top(doc, "$",
             {"name", "task", "model", "levels", "train", "solve", "data", "seeds", "ablation", "output_dir"});
  if (!top.has("task")) Reader::fail("$.task", "missing");
  Reader task(top.at("task"), "$.task",
              {"family", "n", "rank", "order", "horizon", "mask_frac", "max_out_degree", "standard", "harder"});
  std::string family_name;
  if (!task.has("family")) Reader::fail("$.task.family", "missing");
  task.read("family", family_name);
  TaskFamily family;
  try {
    family = task_family_from_string(family_name);
  } catch (const std::invalid_argument& e) {
    Reader::fail("$.task.family", e.what());
  }

  ExperimentConfig c = defaults(family);
  top.read("name", c.name);
  top.read("levels", c.levels);
  top.read("output_dir", c.output_dir);
  top.read_list("seeds", c.seeds);

  task.read("n", c.task.n);
  task.read("rank", c.task.rank);
  task.read("order", c.task.order);
  task.read("horizon", c.task.horizon);
  task.read("mask_frac", c.task.mask_frac);
  task.read("max_out_degree", c.task.max_out_degree);
  read_split(task, "standard", c.task.standard);
  read_split(task, "harder", c.task.harder);

  if (top.has("model")) {
    Reader r(top.at("model"), "$.model", {"arch", "width", "depth"});
    std::string arch = to_string(c.model.arch);
    r.read("arch", arch);
    try {
      c.model.arch = architecture_from_string(arch);
    } catch (const std::invalid_argument& e) {
      Reader::fail("$.model.arch", e.what());
    }
    r.read("width", c.model.width);
    r.read("depth", c.model.depth);
  }
  if (top.has("train")) {
    Reader r(top.at("train"), "$.train",
             {"batch", "learning_rate", "iterations", "contrastive_weight", "checkpoint_every", "negative"});
    r.read("batch", c.train.batch);
    r.read("learning_rate", c.train.learning_rate);
    r.read("iterations", c.train.iterations);
    r.read("contrastive_weight", c.train.contrastive_weight);
    r.read("checkpoint_every", c.train.checkpoint_every);
    if (r.has("negative")) {
      Reader n(r.at("negative"), "$.train.negative",
               {"resample_fraction", "label_noise", "descent_steps", "step_scale", "descent_for_discrete"});
      n.read("resample_fraction", c.train.negative.resample_fraction);
      n.read("label_noise", c.train.negative.label_noise);
      n.read("descent_steps", c.train.negative.descent_steps);
      n.read("step_scale", c.train.negative.step_scale);
      n.read("descent_for_discrete", c.train.negative.descent_for_discrete);
    }
  }
  if (top.has("solve")) {
    Reader r(top.at("solve"), "$.solve", {"steps", "step_scale", "acceptance_check", "polish", "batch"});
    r.read_list("steps", c.solve.steps);
    r.read("step_scale", c.solve.step_scale);
    r.read("acceptance_check", c.solve.acceptance_check);
    r.read("polish", c.solve.polish);
    r.read("batch", c.solve.batch);
  }
  if (top.has("data")) {
    Reader r(top.at("data"), "$.data", {"train", "test", "harder", "seed"});
    r.read("train", c.data.train);
    r.read("test", c.data.test);
    r.read("harder", c.data.harder);
    std::size_t seed = c.data.seed;
    r.read("seed", seed);
    c.data.seed = seed;
  }
  if (top.has("ablation")) {
    Reader r(top.at("ablation"), "$.ablation", {"gradient_descent", "refinement", "contrastive", "steps"});
    r.read("gradient_descent", c.ablation.gradient_descent);
    r.read("refinement", c.ablation.refinement);
    r.read("contrastive", c.ablation.contrastive);
    r.read("steps", c.ablation.steps);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CommandError("config: cannot open " + path.string(), {{"path", path.string()}});
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw CommandError("config: " + path.string() + ": " + e.what(), {{"path", path.string()}});
  }
  return from_json(doc);
}

json ExperimentConfig::to_json() const {
  const auto& n = train.negative;
  return {
      {"name", name},
      {"task",
       {{"family", to_string(task.family)},
        {"n", task.n},
        {"rank", task.rank},
        {"order", task.order},
        {"horizon", task.horizon},
        {"mask_frac", task.mask_frac},
        {"max_out_degree", task.max_out_degree},
        {"standard", split_json(task.standard)},
        {"harder", split_json(task.harder)}}},
      {"model", {{"arch", to_string(model.arch)}, {"width", model.width}, {"depth", model.depth}}},
      {"levels", levels},
      {"train",
       {{"batch", train.batch},
        {"learning_rate", train.learning_rate},
        {"iterations", train.iterations},
        {"contrastive_weight", train.contrastive_weight},
        {"checkpoint_every", train.checkpoint_every},
        {"negative",
         {{"resample_fraction", n.resample_fraction},
          {"label_noise", n.label_noise},
          {"descent_steps", n.descent_steps},
          {"step_scale", n.step_scale},
          {"descent_for_discrete", n.descent_for_discrete}}}}},
      {"solve",
       {{"steps", solve.steps},
        {"step_scale", solve.step_scale},
        {"acceptance_check", solve.acceptance_check},
        {"polish", solve.polish},
        {"batch", solve.batch}}},
      {"data", {{"train", data.train}, {"test", data.test}, {"harder", data.harder}, {"seed", data.seed}}},
      {"seeds", seeds},
      {"ablation",
       {{"gradient_descent", ablation.gradient_descent},
        {"refinement", ablation.refinement},
        {"contrastive", ablation.contrastive},
        {"steps", ablation.steps}}},
      {"output_dir", output_dir},
  };
}

void ExperimentConfig::validate() const {
  auto guard = [](const char* where, auto&& fn) {
    try {
      fn();
    } catch (const CommandError&) {
      throw;
    } catch (const std::exception& e) {
      Reader::fail(where, e.what());
    }
  };
  if (levels < 1) Reader::fail("$.levels", "must be >= 1");
  guard("$.task", [&] {
    task.kind(Difficulty::kStandard).validate();
    task.kind(Difficulty::kHarder).validate();
  });
  if (!(task.mask_frac > 0 && task.mask_frac < 1)) Reader::fail("$.task.mask_frac", "must be in (0, 1)");
  validate_split(task.standard, "standard");
  validate_split(task.harder, "harder");
  guard("$.model", [&] { model_spec().validate(); });
  guard("$.train", [&] { train.validate(); });
  if (solve.steps.empty()) Reader::fail("$.solve.steps", "needs at least one T");
  for (int t : solve.steps) {
    if (t < 0) Reader::fail("$.solve.steps", "T must be >= 0");
  }
  if (!(solve.step_scale > 0)) Reader::fail("$.solve.step_scale", "must be > 0");
  if (solve.batch < 1) Reader::fail("$.solve.batch", "must be >= 1");
  if (seeds.empty()) Reader::fail("$.seeds", "needs at least one seed");
  if (ablation.steps < 1) Reader::fail("$.ablation.steps", "must be >= 1");
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << h;
  return s.str();
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("output_dir");
  return fnv1a_hex(j.dump());
}

ModelSpec ExperimentConfig::model_spec() const {
  const TaskKind k = task.kind(Difficulty::kStandard);
  ModelSpec s;
  s.arch = model.arch;
  s.width = model.width;
  s.depth = model.depth;
  s.x_dim = k.x_dim();
  s.y_dim = k.y_dim();
  s.levels = levels;
  s.board_size = k.board_size();
  return s;
}

TrainConfig ExperimentConfig::effective_train() const {
  TrainConfig t = train;
  if (!ablation.contrastive) t.contrastive_weight = 0;
  return t;
}

SolveConfig ExperimentConfig::solve_config(int steps, std::uint64_t seed) const {
  SolveConfig s;
  s.steps = steps;
  s.step_scale = solve.step_scale;
  s.acceptance_check = solve.acceptance_check;
  s.polish = solve.polish;
  s.noisy_mode = !ablation.gradient_descent;
  s.seed = seed;
  return s;
}

fs::path ExperimentConfig::output_root() const {
  const fs::path dir(output_dir);
  if (dir.is_relative()) {
    if (const char* root = std::getenv("IRED_OUT"); root && *root) return fs::path(root) / dir;
  }
  return dir;
}

}  // namespace ired

#include <cstdlib>
#include <random>

#include "doctest.h"
#include "ired/harness.hpp"

using namespace ired;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ired_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig small_config(const std::string& family, const fs::path& out, json extra = json::object()) {
  json doc = {{"task", {{"family", family}}},
              {"model", {{"width", 8}, {"depth", 2}}},
              {"train", {{"batch", 4}, {"iterations", 6}}},
              {"solve", {{"steps", {1, 3}}, {"batch", 8}}},
              {"data", {{"train", 16}, {"test", 6}, {"harder", 5}}},
              {"output_dir", out.string()}};
  doc.merge_patch(extra);
  return ExperimentConfig::from_json(doc);
}

std::size_t line_count(const fs::path& p) {
  const std::string text = read_text(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("config defaults validate for every family") {
  for (auto f : {TaskFamily::kAddition, TaskFamily::kCompletion, TaskFamily::kInverse, TaskFamily::kSudoku,
                 TaskFamily::kConnectivity, TaskFamily::kShortestPath}) {
    CAPTURE(to_string(f));
    const auto c = ExperimentConfig::defaults(f);
    CHECK_NOTHROW(c.validate());
    const auto back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
  }
}

TEST_CASE("config schema errors name the offending path") {
  const auto expect_error = [](const json& doc, const std::string& path) {
    try {
      ExperimentConfig::from_json(doc);
      FAIL("accepted " << doc.dump());
    } catch (const CommandError& e) {
      CHECK(e.detail().at("path") == path);
    }
  };
  expect_error({{"task", {{"family", "addition"}}}, {"bogus", 1}}, "$.bogus");
  expect_error({{"task", {{"family", "addition"}}}, {"train", {{"iterations", "many"}}}}, "$.train.iterations");
  expect_error({{"task", {{"family", "addition"}, {"size", 3}}}}, "$.task.size");
  expect_error({{"task", {{"family", "chess"}}}}, "$.task.family");
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"task", {{"family", "addition"}}}, {"seeds", json::array()}}),
                  CommandError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"task", {{"family", "addition"}}}, {"solve", {{"steps", {-1}}}}}),
                  CommandError);
}

TEST_CASE("config hash tracks content but not the output directory") {
  const auto a = small_config("addition", "/tmp/a");
  const auto b = small_config("addition", "/tmp/b");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  const auto c = small_config("addition", "/tmp/a", {{"train", {{"iterations", 7}}}});
  CHECK(a.hash() != c.hash());
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
}

TEST_CASE("output root honours IRED_OUT for relative paths") {
  auto c = ExperimentConfig::defaults(TaskFamily::kAddition);
  c.output_dir = "rel";
  ::setenv("IRED_OUT", "/tmp/ired_root", 1);
  CHECK(c.output_root() == fs::path("/tmp/ired_root/rel"));
  c.output_dir = "/abs";
  CHECK(c.output_root() == fs::path("/abs"));
  ::unsetenv("IRED_OUT");
  c.output_dir = "rel";
  CHECK(c.output_root() == fs::path("rel"));
}

TEST_CASE("gen with zero instances writes a header-only file") {
  const auto dir = fresh_dir("gen_empty");
  const auto c = small_config("addition", dir, {{"data", {{"train", 0}, {"test", 0}, {"harder", 0}}}});
  const auto out = cmd_gen(c);
  CHECK(line_count(out.train) == 1);
  CHECK(read_text(out.train).rfind("# ired-dataset 1 ", 0) == 0);
  CHECK(read_dataset(out.train).empty());
}

TEST_CASE("gen is byte-identical for the same seed") {
  const auto c1 = small_config("sudoku", fresh_dir("gen_a"));
  const auto c2 = small_config("sudoku", fresh_dir("gen_b"));
  const auto a = cmd_gen(c1), b = cmd_gen(c2);
  CHECK(read_text(a.train) == read_text(b.train));
  CHECK(read_text(a.harder) == read_text(b.harder));
  CHECK(read_text(a.train) != read_text(a.test));
}

TEST_CASE("connectivity datasets pass the oracle after reload") {
  const auto dir = fresh_dir("gen_conn");
  const auto c = small_config("connectivity", dir, {{"data", {{"train", 100}, {"test", 0}, {"harder", 0}}}});
  const auto data = read_dataset(cmd_gen(c).train);
  REQUIRE(data.size() == 100);
  for (const auto& inst : data) {
    CHECK(validate_instance(inst));
    const auto reach = bfs_reachability(inst.meta.adjacency, inst.kind.n);
    CHECK(std::vector<double>(reach.begin(), reach.end()) == inst.y_star);
  }
}

TEST_CASE("dataset reader reports the bad line") {
  const auto dir = fresh_dir("bad_dataset");
  write_text(dir / "d.jsonl", "# ired-dataset 1 {}\n{\"kind\": 3}\n");
  try {
    read_dataset(dir / "d.jsonl");
    FAIL("accepted");
  } catch (const CommandError& e) {
    CHECK(e.detail().at("line") == 2);
  }
  write_text(dir / "e.jsonl", "no header\n");
  CHECK_THROWS_AS(read_dataset(dir / "e.jsonl"), CommandError);
  CHECK_THROWS_AS(read_dataset(dir / "missing.jsonl"), CommandError);
}

TEST_CASE("train with zero iterations saves the initialization") {
  const auto dir = fresh_dir("train_zero");
  const auto c = small_config("addition", dir, {{"train", {{"iterations", 0}}}});
  cmd_gen(c);
  const auto out = cmd_train(c, 3);
  const auto ck = load_checkpoint(out.checkpoint);
  const auto init = build(c.model_spec(), 3);
  REQUIRE(ck.model->parameters().size() == init->parameters().size());
  for (std::size_t i = 0; i < init->parameters().size(); ++i) {
    CHECK(ck.model->parameters()[i].value.to_vector() == init->parameters()[i].value.to_vector());
  }
  CHECK(ck.iteration == 0);
  CHECK(line_count(out.loss_csv) == 1);
}

TEST_CASE("train writes interval checkpoints and one loss row per iteration") {
  const auto dir = fresh_dir("train_rows");
  const auto c = small_config("addition", dir, {{"train", {{"iterations", 6}, {"checkpoint_every", 2}}}});
  cmd_gen(c);
  const auto out = cmd_train(c, 0);
  CHECK(line_count(out.loss_csv) == 7);
  CHECK(out.history.size() == 6);
  for (int n : {2, 4, 6}) CHECK(fs::exists(dir / "seed_0" / ("checkpoint_" + std::to_string(n) + ".ckpt")));
  const auto ck = load_checkpoint(out.checkpoint);
  CHECK(ck.iteration == 6);
  CHECK(ck.config_hash == c.hash());
  REQUIRE(ck.adam);
  CHECK(ck.adam->step == 6);
}

TEST_CASE("resuming mid-run matches the uninterrupted run") {
  const json extra = {{"train", {{"iterations", 6}, {"checkpoint_every", 3}}}};
  const auto full_dir = fresh_dir("resume_full");
  const auto full = small_config("addition", full_dir, extra);
  cmd_gen(full);
  const auto a = cmd_train(full, 1);

  const auto part_dir = fresh_dir("resume_part");
  const auto part = small_config("addition", part_dir, extra);
  cmd_gen(part);
  cmd_train(part, 1);
  const fs::path mid = part_dir / "seed_1" / "checkpoint_3.ckpt";
  const auto b = cmd_train(part, 1, mid);
  CHECK(read_text(a.checkpoint) == read_text(b.checkpoint));
  CHECK(read_text(a.loss_csv) == read_text(b.loss_csv));
}

TEST_CASE("resume rejects a different config or seed") {
  const auto dir = fresh_dir("resume_reject");
  const auto c = small_config("addition", dir);
  cmd_gen(c);
  const auto out = cmd_train(c, 0);
  const auto other = small_config("addition", dir, {{"train", {{"learning_rate", 0.5}}}});
  CHECK_THROWS_AS(cmd_train(other, 0, out.checkpoint), CommandError);
  CHECK_THROWS_AS(cmd_train(c, 1, out.checkpoint), CommandError);
}

TEST_CASE("train without a dataset is rejected") {
  const auto c = small_config("addition", fresh_dir("train_nodata"));
  CHECK_THROWS_AS(cmd_train(c, 0), CommandError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = fresh_dir("ckpt_roundtrip");
  ModelSpec spec;
  spec.arch = Architecture::kMlpEnergy;
  spec.width = 12;
  spec.depth = 2;
  spec.x_dim = 5;
  spec.y_dim = 3;
  const auto model = build(spec, 42);
  const auto sched = NoiseSchedule::cosine(10);
  save_checkpoint(dir / "m.ckpt", *model, sched, 17, 4, "abc", nullptr);
  const auto ck = load_checkpoint(dir / "m.ckpt");
  CHECK(ck.iteration == 17);
  CHECK(ck.seed == 4);
  CHECK(!ck.adam);
  CHECK(ck.alpha_bar == sched.alpha_bars());

  std::mt19937_64 gen(9);
  std::normal_distribution<double> normal;
  std::vector<double> xs(100 * 5), ys(100 * 3);
  for (double& v : xs) v = normal(gen);
  for (double& v : ys) v = normal(gen);
  const Tensor x = Tensor::constant({100, 5}, xs), y = Tensor::constant({100, 3}, ys);
  std::vector<int> levels(100);
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = static_cast<int>(i % 10) + 1;
  CHECK(model->energies(x, y, levels).to_vector() == ck.model->energies(x, y, levels).to_vector());

  SolveConfig solve;
  solve.steps = 3;
  CHECK(anneal_solve(*model, x, 3, sched, solve).to_vector() == anneal_solve(*ck.model, x, 3, sched, solve).to_vector());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto dir = fresh_dir("ckpt_corrupt");
  ModelSpec spec;
  spec.width = 4;
  spec.depth = 1;
  spec.x_dim = 2;
  spec.y_dim = 1;
  save_checkpoint(dir / "m.ckpt", *build(spec, 0), NoiseSchedule::cosine(10), 0, 0, "h", nullptr);
  std::string bytes = read_text(dir / "m.ckpt");
  write_text(dir / "short.ckpt", bytes.substr(0, bytes.size() - 3));
  write_text(dir / "long.ckpt", bytes + "x");
  write_text(dir / "magic.ckpt", "NOTACKPT" + bytes.substr(8));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), CommandError);
  CHECK_THROWS_AS(load_checkpoint(dir / "long.ckpt"), CommandError);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), CommandError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), CommandError);
}

TEST_CASE("evaluate with analytic stubs") {
  const auto sched = NoiseSchedule::cosine(10);
  SolveConfig solve;
  solve.steps = 1;
  solve.step_sizes = std::vector<double>(11, 1.0);

  SUBCASE("quadratic head on addition reaches the closed-form sum") {
    const auto data = gen_addition(8, 1.0, 20, 5);
    const TaskKind kind = data[0].kind;
    QuadraticEnergy q(
        [kind](const Tensor& x) {
          std::vector<double> out;
          for (std::size_t r = 0; r < x.dim(0); ++r) {
            const auto row = std::span(x.data()).subspan(r * x.dim(1), x.dim(1));
            const auto y = solve_exact(kind, row);
            out.insert(out.end(), y.begin(), y.end());
          }
          return Tensor::constant({x.dim(0), kind.y_dim()}, out);
        },
        sched, true, QuadraticEnergy::Weighting::kUnit);
    const auto score = evaluate(q, data, sched, solve, 7);
    CHECK(score.count == 20);
    CHECK(score.metric < 1e-10);
  }

  SUBCASE("perfect oracle on connectivity scores 1") {
    const auto data = gen_connectivity(8, 12, 6);
    const TaskKind kind = data[0].kind;
    QuadraticEnergy q(
        [kind](const Tensor& x) {
          std::vector<double> out;
          for (std::size_t r = 0; r < x.dim(0); ++r) {
            const auto row = std::span(x.data()).subspan(r * x.dim(1), x.dim(1));
            const auto y = solve_exact(kind, row);
            out.insert(out.end(), y.begin(), y.end());
          }
          return Tensor::constant({x.dim(0), kind.y_dim()}, out);
        },
        sched, true, QuadraticEnergy::Weighting::kUnit);
    const auto score = evaluate(q, data, sched, solve, 5);
    CHECK(score.metric == 1.0);
    CHECK(score.exact_match == 1.0);
  }
}

TEST_CASE("eval reports one row per difficulty, T and seed") {
  const auto dir = fresh_dir("eval_rows");
  const auto c = small_config("addition", dir, {{"seeds", {0, 1}}, {"solve", {{"steps", {1, 2, 4}}}}});
  cmd_gen(c);
  std::vector<fs::path> ckpts;
  for (std::uint64_t s : c.seeds) ckpts.push_back(cmd_train(c, s).checkpoint);
  const auto report = cmd_eval(c, ckpts);
  CHECK(report.rows.size() == 2 * 3 * 2);
  CHECK(report.aggregate().size() == 2 * 3);
  for (const auto& a : report.aggregate()) CHECK(a.seeds == 2);
  CHECK(report.config_hash == c.hash());
  CHECK(line_count(dir / "eval" / "report.csv") == 1 + report.rows.size());
  const json j = json::parse(read_text(dir / "eval" / "report.json"));
  CHECK(j.at("rows").size() == report.rows.size());
  CHECK(fs::exists(dir / "eval" / "timing.json"));
}

TEST_CASE("eval rejects a checkpoint for another task shape") {
  const auto dir = fresh_dir("eval_incompatible");
  const auto c = small_config("addition", dir);
  cmd_gen(c);
  const auto ck = cmd_train(c, 0).checkpoint;
  const auto dir2 = fresh_dir("eval_incompatible_small");
  const auto small = small_config("addition", dir2, {{"task", {{"n", 4}}}});
  cmd_gen(small);
  const std::vector<fs::path> ckpts = {ck};
  CHECK_THROWS_AS(cmd_eval(small, ckpts), CommandError);
}

TEST_CASE("train and eval reproduce byte-identical reports") {
  std::string first;
  for (const char* name : {"repro_a", "repro_b"}) {
    const auto dir = fresh_dir(name);
    const auto c = small_config("addition", dir);
    cmd_gen(c);
    const std::vector<fs::path> ckpts = {cmd_train(c, 0).checkpoint};
    cmd_eval(c, ckpts);
    const std::string report = read_text(dir / "eval" / "report.json") + read_text(dir / "eval" / "report.csv");
    if (first.empty()) {
      first = report;
    } else {
      CHECK(report == first);
    }
  }
}

TEST_CASE("ablation ladder differs only in the flagged mechanism") {
  const auto base = small_config("addition", "/tmp/unused");
  const auto ladder = ablation_ladder(base);
  REQUIRE(ladder.size() == 4);
  std::vector<std::string> hashes;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    json a = ladder[i].to_json(), b = base.to_json();
    a.erase("ablation");
    b.erase("ablation");
    CHECK(a == b);
    hashes.push_back(ladder[i].hash());
  }
  std::sort(hashes.begin(), hashes.end());
  CHECK(std::unique(hashes.begin(), hashes.end()) == hashes.end());

  CHECK(ladder[0].solve_config(10, 0).noisy_mode);
  for (std::size_t i = 1; i < 4; ++i) CHECK_FALSE(ladder[i].solve_config(10, 0).noisy_mode);
  CHECK(ladder[0].effective_train().contrastive_weight == 0.0);
  CHECK(ladder[2].effective_train().contrastive_weight == 0.0);
  CHECK(ladder[3].effective_train().contrastive_weight == base.train.contrastive_weight);
}

TEST_CASE("ablate emits four rows per seed and split") {
  const auto dir = fresh_dir("ablate");
  const auto c = small_config("addition", dir, {{"seeds", {0, 1}}, {"ablation", {{"steps", 3}}}});
  cmd_gen(c);
  const auto report = cmd_ablate(c);
  CHECK(report.rows.size() == 4 * 2 * 2);
  for (const auto& r : report.rows) {
    CHECK(r.noisy == (r.row == 1));
    CHECK(r.steps == (r.row <= 2 ? 1 : 3));
  }
  for (int row = 1; row <= 4; ++row) {
    const auto [mean, sd] = report.summary(row, "harder");
    CHECK(std::isfinite(mean));
    CHECK(sd >= 0.0);
  }
  CHECK(fs::exists(dir / "ablation" / "report.json"));
  CHECK(fs::exists(dir / "ablation" / "report.csv"));
}

TEST_CASE("plot-traces writes per-step energies") {
  const auto dir = fresh_dir("traces");
  const auto c = small_config("addition", dir);
  cmd_gen(c);
  const auto ck = cmd_train(c, 0).checkpoint;
  const auto out = cmd_plot_traces(c, ck, Difficulty::kHarder, 2, 3);
  const json j = json::parse(read_text(out / "traces.json"));
  CHECK(j.is_object());
  // header plus 2 instances x 9 landscapes x 3 steps
  CHECK(line_count(out / "traces.csv") == 1 + 2 * 9 * 3);
}

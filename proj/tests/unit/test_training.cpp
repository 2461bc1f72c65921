#include <cmath>
#include <limits>

#include "doctest.h"
#include "ired/training.hpp"
#include "support/random_graphs.hpp"

using namespace ired;

namespace {

const NoiseSchedule kSched = NoiseSchedule::cosine(10);

ModelSpec mlp_spec(std::size_t x_dim, std::size_t y_dim, std::size_t width = 16, std::size_t depth = 2) {
  ModelSpec s;
  s.width = width;
  s.depth = depth;
  s.x_dim = x_dim;
  s.y_dim = y_dim;
  return s;
}

Tensor random_batch(std::size_t rows, std::size_t cols, Rng& rng) {
  return Tensor::constant({rows, cols}, rng.normal_vector(rows * cols));
}

std::vector<std::vector<double>> snapshot(const EnergyModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.push_back(p.value.to_vector());
  return out;
}

TaskKind addition(std::size_t n) {
  TaskKind t;
  t.family = TaskFamily::kAddition;
  t.n = n;
  return t;
}

}  // namespace

TEST_CASE("exact noise predictor gives zero denoising loss") {
  // Center c(x) = x, so the labels are passed as x.
  QuadraticEnergy perfect([](const Tensor& x) { return x; }, kSched, true, QuadraticEnergy::Weighting::kScore);
  Rng data(1);
  const auto y = random_batch(16, 5, data);
  Rng rng(2);
  CHECK(denoising_loss(perfect, y, y, kSched, rng).item() < 1e-24);
}

TEST_CASE("zero model denoising loss is the mean squared noise norm") {
  const auto m = build(mlp_spec(3, 4), 0, Init::kZero);
  Rng data(4);
  const auto x = random_batch(32, 3, data);
  const auto y = random_batch(32, 4, data);
  Rng rng(9), replay(9);
  const double loss = denoising_loss(*m, x, y, kSched, rng).item();
  const auto noise = sample_noise(32, 4, kSched, replay);
  double total = 0;
  for (double e : noise.eps.to_vector()) total += e * e;
  CHECK(loss == doctest::Approx(total / 32).epsilon(1e-14));
  for (int k : noise.levels) CHECK((k >= 1 && k <= 10));
}

TEST_CASE("clean level denoising target") {
  const auto m = build(mlp_spec(2, 3), 6);
  Rng rng(3);
  const auto x = random_batch(1, 2, rng);
  const auto y = random_batch(1, 3, rng);
  NoiseDraw noise{{0}, random_batch(1, 3, rng)};
  const double loss = denoising_terms(*m, x, y, kSched, noise).loss.item();
  const auto g = gradient_y(*m, x, y, 0).to_vector();
  double expected = 0;
  for (std::size_t i = 0; i < 3; ++i) expected += std::pow(g[i] - noise.eps.at(i), 2);
  CHECK(loss == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("denoising loss rejects mismatched shapes") {
  const auto m = build(mlp_spec(2, 3), 6);
  NoiseDraw noise{{1, 2}, Tensor::zeros({2, 4})};
  CHECK_THROWS_AS(denoising_terms(*m, Tensor::zeros({2, 2}), Tensor::zeros({2, 3}), kSched, noise), ShapeError);
}

TEST_CASE("continuous negatives under a zero model are perturbed labels") {
  const auto m = build(mlp_spec(2, 4), 0, Init::kZero);
  Rng data(5);
  const auto x = random_batch(3, 2, data);
  const auto y = random_batch(3, 4, data);
  const std::vector<int> levels = {1, 5, 9};
  Rng rng(7), replay(7);
  const auto neg = make_negative(y, addition(2), *m, x, levels, kSched, NegativeConfig{}, rng).to_vector();
  for (std::size_t i = 0; i < neg.size(); ++i) {
    CHECK(neg[i] == doctest::Approx(y.at(i) + 0.3 * replay.normal()).epsilon(1e-15));
  }
}

TEST_CASE("continuous negatives take two plain steps") {
  // Quadratic centred on zero: each step scales y by (1 - lambda_k).
  const auto q = QuadraticEnergy::fixed({0.0, 0.0}, kSched, false);
  const auto y = Tensor::constant({2, 2}, {1.0, -1.0, 2.0, 0.5});
  const std::vector<int> levels = {3, 8};
  Rng rng(2), replay(2);
  const auto neg = make_negative(y, addition(1), q, Tensor::zeros({2, 1}), levels, kSched, NegativeConfig{}, rng);
  for (std::size_t r = 0; r < 2; ++r) {
    const double lambda = 1 - kSched.alpha_bar(levels[r]);
    for (std::size_t j = 0; j < 2; ++j) {
      const double start = y.at(r * 2 + j) + 0.3 * replay.normal();
      CHECK(neg.at(r * 2 + j) == doctest::Approx(start * (1 - lambda) * (1 - lambda)).epsilon(1e-13));
    }
  }
}

TEST_CASE("discrete negatives resample whole groups") {
  TaskKind sudoku;
  sudoku.family = TaskFamily::kSudoku;
  sudoku.order = 2;
  const auto m = build(mlp_spec(1, 16), 0, Init::kZero);
  // Four cells of four categories each.
  const auto y = Tensor::constant({1, 16}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  const std::vector<int> levels = {3};

  NegativeConfig none;
  none.resample_fraction = 0;
  Rng rng0(1);
  CHECK(make_negative(y, sudoku, *m, Tensor::zeros({1, 1}), levels, kSched, none, rng0).to_vector() ==
        y.to_vector());

  NegativeConfig half;
  half.resample_fraction = 0.5;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto neg = make_negative(y, sudoku, *m, Tensor::zeros({1, 1}), levels, kSched, half, rng).to_vector();
    int changed = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      double sum = 0;
      bool same = true;
      for (std::size_t j = 0; j < 4; ++j) {
        const double v = neg[c * 4 + j];
        CHECK((v == 0.0 || v == 1.0));
        sum += v;
        same = same && v == y.at(c * 4 + j);
      }
      CHECK(sum == 1.0);
      if (!same) ++changed;
    }
    CHECK(changed == 2);
  }

  TaskKind conn;
  conn.family = TaskFamily::kConnectivity;
  conn.n = 4;
  NegativeConfig quarter;
  quarter.resample_fraction = 0.25;
  const auto bits = Tensor::constant({1, 16}, std::vector<double>(16, 1.0));
  Rng rng(3);
  const auto flipped = make_negative(bits, conn, *m, Tensor::zeros({1, 1}), levels, kSched, quarter, rng).to_vector();
  int zeros = 0;
  for (double v : flipped) zeros += v == 0.0;
  CHECK(zeros == 4);
}

TEST_CASE("contrastive loss values") {
  const auto m = build(mlp_spec(2, 3), 0, Init::kZero);
  Rng rng(4);
  const auto x = random_batch(1, 2, rng);
  const auto y = random_batch(1, 3, rng);
  NoiseDraw noise{{2}, random_batch(1, 3, rng)};
  const double base = eval(*m, x, y, 2).item();
  auto with_gap = [&](double gap) {
    return contrastive_loss_from(*m, x, Tensor::constant({1, 1}, {base + gap}), y, kSched, noise).item();
  };
  CHECK(with_gap(0) == doctest::Approx(0.693147180559945309).epsilon(1e-15));
  CHECK(with_gap(-10) == doctest::Approx(4.5398899216864646769e-5).epsilon(1e-12));
  CHECK(with_gap(2) == doctest::Approx(2.1269280110429724964).epsilon(1e-14));
  double previous = 0;
  for (double gap = -30; gap <= 30; gap += 0.5) {
    const double v = with_gap(gap);
    CHECK(v > 0);
    CHECK(v > previous);
    previous = v;
  }
}

TEST_CASE("identical negatives give exactly ln 2") {
  const auto m = build(mlp_spec(3, 4), 12);
  Rng rng(8);
  const auto x = random_batch(8, 3, rng);
  const auto y = random_batch(8, 4, rng);
  const auto noise = sample_noise(8, 4, kSched, rng);
  CHECK(contrastive_loss(*m, x, y, y, kSched, noise).item() == std::log(2.0));
  CHECK_THROWS_AS(contrastive_loss(*m, x, y, Tensor::zeros({8, 3}), kSched, noise), ShapeError);
}

TEST_CASE("total loss gradient matches finite differences in the parameters") {
  // 145 parameters: width 6, two layers, x and y of width 2.
  auto m = build(mlp_spec(2, 2, 6, 2), 21);
  REQUIRE(m->parameter_count() <= 200);
  Rng rng(13);
  const auto x = random_batch(4, 2, rng);
  const auto y = random_batch(4, 2, rng);
  const auto noise = sample_noise(4, 2, kSched, rng);
  const auto negatives = make_negative(y, addition(1), *m, x, noise.levels, kSched, NegativeConfig{}, rng);

  auto total = [&] {
    const auto terms = denoising_terms(*m, x, y, kSched, noise);
    return add(terms.loss, contrastive_loss_from(*m, x, terms.positive_energy, negatives, kSched, noise));
  };
  std::vector<Tensor> leaves;
  for (const auto& p : m->parameters()) leaves.push_back(p.value);
  const auto grads = grad(total(), leaves, false);

  std::vector<double> analytic, numeric;
  const double h = 1e-6;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto w = m->parameters()[i].value.mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double keep = w[j];
      w[j] = keep + h;
      const double up = total().item();
      w[j] = keep - h;
      const double down = total().item();
      w[j] = keep;
      numeric.push_back((up - down) / (2 * h));
      analytic.push_back(grads[i].at(j));
    }
  }
  CHECK(analytic.size() == m->parameter_count());
  CHECK(testing::relative_error(analytic, numeric) < 1e-3);
}

TEST_CASE("adam update") {
  auto m = build(mlp_spec(1, 1, 2, 1), 3);
  auto adam = AdamState::for_model(*m);
  const auto before = snapshot(*m);
  std::vector<Tensor> grads;
  for (const auto& p : m->parameters()) grads.push_back(Tensor::full(p.value.shape(), -0.5));
  adam.apply(m->parameters(), grads, 0.01);
  CHECK(adam.step == 1);
  const auto after = snapshot(*m);
  // First bias-corrected step moves every weight by lr * g / (|g| + eps).
  for (std::size_t i = 0; i < after.size(); ++i) {
    for (std::size_t j = 0; j < after[i].size(); ++j) {
      CHECK(after[i][j] - before[i][j] == doctest::Approx(0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-10));
    }
  }
  grads.pop_back();
  CHECK_THROWS_AS(adam.apply(m->parameters(), grads, 0.01), std::invalid_argument);
}

namespace {

std::vector<ProblemInstance> addition_data(std::size_t count) { return gen_addition(2, 1.0, count, 77); }

}  // namespace

TEST_CASE("zero contrastive weight matches a denoising-only step") {
  const auto data = addition_data(8);
  const auto x = stack_x(data), y = stack_y(data);
  const auto spec = mlp_spec(data[0].x.size(), data[0].y_star.size());
  auto a = build(spec, 5);
  auto b = build(spec, 5);
  auto adam_a = AdamState::for_model(*a), adam_b = AdamState::for_model(*b);

  TrainConfig cfg;
  cfg.contrastive_weight = 0;
  cfg.learning_rate = 1e-2;
  Rng rng_a(3), rng_b(3);
  const auto losses = train_step(*a, adam_a, x, y, data[0].kind, cfg, kSched, rng_a);
  CHECK(losses.contrast > 0);

  const auto noise = sample_noise(y.dim(0), y.dim(1), kSched, rng_b);
  const auto loss = denoising_terms(*b, x, y, kSched, noise).loss;
  std::vector<Tensor> leaves;
  for (const auto& p : b->parameters()) leaves.push_back(p.value);
  adam_b.apply(b->parameters(), grad(loss, leaves), cfg.learning_rate);
  CHECK(losses.mse == loss.item());
  CHECK(snapshot(*a) == snapshot(*b));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto data = addition_data(8);
  auto m = build(mlp_spec(data[0].x.size(), data[0].y_star.size()), 5);
  auto adam = AdamState::for_model(*m);
  const auto before = snapshot(*m);
  TrainConfig cfg;
  cfg.learning_rate = 0;
  Rng rng(1);
  const auto losses = train_step(*m, adam, stack_x(data), stack_y(data), data[0].kind, cfg, kSched, rng);
  CHECK(losses.mse > 0);
  CHECK(losses.contrast > 0);
  CHECK(snapshot(*m) == before);
}

TEST_CASE("training loop bookkeeping and determinism") {
  const auto data = addition_data(32);
  const auto spec = mlp_spec(data[0].x.size(), data[0].y_star.size());
  TrainConfig cfg;
  cfg.batch = 8;
  cfg.iterations = 12;
  cfg.learning_rate = 1e-2;
  cfg.seed = 4;
  cfg.checkpoint_every = 5;

  auto run = [&](std::uint64_t split) {
    auto m = build(spec, 9);
    auto adam = AdamState::for_model(*m);
    std::vector<std::uint64_t> hooks;
    auto hook = [&](std::uint64_t done, const EnergyModel&, const AdamState&) { hooks.push_back(done); };
    auto history = split == 0 ? train(*m, adam, data, cfg, kSched, 0, hook) : std::vector<LossRecord>{};
    if (split > 0) {
      TrainConfig first = cfg;
      first.iterations = split;
      history = train(*m, adam, data, first, kSched, 0, hook);
      const auto rest = train(*m, adam, data, cfg, kSched, split, hook);
      history.insert(history.end(), rest.begin(), rest.end());
    }
    return std::make_tuple(history, snapshot(*m), hooks);
  };

  const auto [h1, p1, k1] = run(0);
  const auto [h2, p2, k2] = run(0);
  REQUIRE(h1.size() == 12);
  for (std::size_t i = 0; i < h1.size(); ++i) {
    CHECK(h1[i].iteration == i);
    CHECK(h1[i].mse == h2[i].mse);
    CHECK(h1[i].contrast == h2[i].contrast);
  }
  CHECK(p1 == p2);
  CHECK(k1 == std::vector<std::uint64_t>{5, 10});

  // Interrupted and resumed runs replay the same stream.
  const auto [h3, p3, k3] = run(7);
  REQUIRE(h3.size() == 12);
  for (std::size_t i = 0; i < h3.size(); ++i) CHECK(h3[i].mse == h1[i].mse);
  CHECK(p3 == p1);

  auto m = build(spec, 9);
  auto adam = AdamState::for_model(*m);
  const auto init = snapshot(*m);
  TrainConfig zero = cfg;
  zero.iterations = 0;
  CHECK(train(*m, adam, data, zero, kSched).empty());
  CHECK(snapshot(*m) == init);
  CHECK_THROWS_AS(train(*m, adam, std::span<const ProblemInstance>{}, cfg, kSched), std::invalid_argument);
}

TEST_CASE("non-finite loss aborts training") {
  const auto data = addition_data(8);
  auto m = build(mlp_spec(data[0].x.size(), data[0].y_star.size()), 5);
  m->parameters()[0].value.mutable_data()[0] = std::numeric_limits<double>::infinity();
  auto adam = AdamState::for_model(*m);
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.iterations = 3;
  try {
    train(*m, adam, data, cfg, kSched);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() == 0);
    CHECK(std::string(e.what()).find("loss_mse") != std::string::npos);
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.batch = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.batch = 1;
  cfg.contrastive_weight = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.contrastive_weight = 1;
  cfg.negative.resample_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

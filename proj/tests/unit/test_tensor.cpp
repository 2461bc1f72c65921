#include <cmath>
#include <limits>

#include "doctest.h"
#include "ired/tensor.hpp"
#include "support/random_graphs.hpp"

using namespace ired;

namespace {

std::vector<double> values(const Tensor& t) { return t.to_vector(); }

}  // namespace

TEST_CASE("elementwise basics") {
  const auto a = Tensor::constant({2}, {1, 2});
  const auto b = Tensor::constant({2}, {3, 4});
  CHECK(values(add(a, b)) == std::vector<double>{4, 6});
  CHECK(values(scale(Tensor::constant({3}, {1, 2, 3}), 0)) == std::vector<double>{0, 0, 0});
  CHECK(silu(Tensor::scalar(0)).item() == 0.0);
  CHECK(values(mul(Tensor::scalar(2), b)) == std::vector<double>{6, 8});
}

TEST_CASE("broadcast limited to scalar and equal shapes") {
  const auto a = Tensor::constant({2}, {1, 2});
  const auto b = Tensor::constant({3}, {1, 2, 3});
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("matmul") {
  const auto m = Tensor::constant({2, 2}, {1, 2, 3, 4});
  const auto eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  CHECK(values(matmul(m, eye)) == values(m));
  CHECK(values(matmul(eye, Tensor::constant({2, 1}, {5, 7}))) == std::vector<double>{5, 7});
  CHECK(matmul(Tensor::constant({1, 2}, {1, 2}), Tensor::constant({2, 1}, {3, 4})).item() == 11);
  CHECK_THROWS_AS(matmul(m, Tensor::constant({3, 1}, {1, 2, 3})), ShapeError);
}

TEST_CASE("grad examples") {
  auto x = Tensor::variable({}, {3});
  CHECK(grad(square(x), x).item() == 6);

  auto z = Tensor::variable({}, {2});
  const auto dz = grad(mul(square(z), z), z, true);
  CHECK(grad(dz, z).item() == doctest::Approx(12).epsilon(1e-15));

  auto y = Tensor::variable({2}, {1, 1});
  const auto c = Tensor::constant({2}, {0, 2});
  const auto g = grad(scale(sq_l2(sub(y, c)), 0.5), y);
  CHECK(values(g) == std::vector<double>{1, -1});
}

TEST_CASE("grad rejects non-scalar and zero-fills unreachable leaves") {
  auto x = Tensor::variable({2}, {1, 2});
  CHECK_THROWS_AS(grad(x, x), ShapeError);
  auto unused = Tensor::variable({3}, {1, 2, 3});
  const auto g = grad(sum(x), unused);
  CHECK(g.shape() == Shape{3});
  CHECK(values(g) == std::vector<double>{0, 0, 0});
}

TEST_CASE("constants never produce gradients") {
  auto c = Tensor::constant({2}, {1, 2});
  CHECK_FALSE(c.requires_grad());
  CHECK(values(grad(sum(square(c)), c)) == std::vector<double>{0, 0});
}

TEST_CASE("reductions") {
  CHECK(sq_l2(Tensor::constant({2}, {3, 4})).item() == 25);
  CHECK(mean(Tensor::constant({3}, {2, 4, 6})).item() == 4);
  CHECK(sum(Tensor::constant({0}, {})).item() == 0);
}

TEST_CASE("gradient extraction leaves forward values unchanged") {
  auto x = Tensor::variable({3}, {0.3, -1.2, 2.0});
  const auto h = tanh(mul(x, x));
  const auto before = values(h);
  grad(sum(h), x);
  grad(sum(h), x, true);
  CHECK(values(h) == before);
}

TEST_CASE("graph trace is topological") {
  auto x = Tensor::variable({2}, {1, 2});
  const auto out = sum(add(square(x), tanh(x)));
  const auto g = Graph::trace(out);
  CHECK(g.is_topological());
  CHECK(g.contains(x));
}

TEST_CASE("softplus is stable at extremes") {
  const auto v = softplus(Tensor::constant({3}, {-800, 0, 800}));
  CHECK(v.at(0) == 0.0);
  CHECK(v.at(1) == doctest::Approx(std::log(2.0)));
  CHECK(v.at(2) == 800.0);
}

TEST_CASE("first-order gradients match finite differences on random graphs") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto g = testing::random_graph(1000 + s, 6, false);
    Rng rng(s, {7});
    std::vector<double> x0(g.input_dim);
    for (double& v : x0) v = rng.uniform(-1, 1);
    auto x = Tensor::variable({g.input_dim}, x0);
    const auto analytic = values(grad(g.fn(x), x, false));
    const auto numeric = testing::numeric_gradient(
        [&](const std::vector<double>& p) { return g.fn(Tensor::constant({p.size()}, p)).item(); }, x0, 1e-5);
    CAPTURE(s);
    CHECK(testing::relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("second-order gradients match finite differences of the first gradient") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto g = testing::random_graph(5000 + s, 6, true);
    Rng rng(s, {8});
    std::vector<double> x0(g.input_dim), v(g.input_dim);
    for (double& e : x0) e = rng.uniform(-1, 1);
    for (double& e : v) e = rng.normal();
    auto x = Tensor::variable({g.input_dim}, x0);
    const auto first = grad(g.fn(x), x, true);
    // Hessian-vector product through a second pass.
    const auto hv = values(grad(sum(mul(first, Tensor::constant({v.size()}, v))), x, false));
    const double h = 1e-5;
    auto grad_at = [&](const std::vector<double>& p) {
      auto leaf = Tensor::variable({p.size()}, p);
      return values(grad(g.fn(leaf), leaf, false));
    };
    std::vector<double> up = x0, down = x0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      up[i] += h * v[i];
      down[i] -= h * v[i];
    }
    const auto gu = grad_at(up), gd = grad_at(down);
    std::vector<double> numeric(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) numeric[i] = (gu[i] - gd[i]) / (2 * h);
    CAPTURE(s);
    CHECK(testing::relative_error(hv, numeric) < 1e-3);
  }
}

TEST_CASE("grad is linear") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto f = testing::random_graph(9000 + s, 4, false);
    auto g = testing::random_graph(9500 + s, 4, false);
    if (g.input_dim != f.input_dim) continue;
    std::vector<double> x0(f.input_dim, 0.25);
    const double alpha = 1.5, beta = -0.75;
    auto x = Tensor::variable({f.input_dim}, x0);
    const auto combined = values(grad(add(scale(f.fn(x), alpha), scale(g.fn(x), beta)), x));
    const auto gf = values(grad(f.fn(x), x));
    const auto gg = values(grad(g.fn(x), x));
    for (std::size_t i = 0; i < x0.size(); ++i) {
      CHECK(combined[i] == doctest::Approx(alpha * gf[i] + beta * gg[i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("repeated evaluation is bit-identical") {
  const auto g = testing::random_graph(77, 6, false);
  std::vector<double> x0(g.input_dim, 0.4);
  auto run = [&] {
    auto x = Tensor::variable({g.input_dim}, x0);
    const auto out = g.fn(x);
    auto d = values(grad(out, x));
    d.push_back(out.item());
    return d;
  };
  CHECK(run() == run());
}

TEST_CASE("no-grad guard suppresses recording") {
  auto x = Tensor::variable({2}, {1, 2});
  {
    NoGradGuard guard;
    CHECK_FALSE(square(x).requires_grad());
  }
  CHECK(square(x).requires_grad());
}

TEST_CASE("index ops are adjoint") {
  auto a = Tensor::variable({3, 2}, {1, 2, 3, 4, 5, 6});
  const auto g = gather_rows(a, {2, 0, -1, 2});
  CHECK(values(g) == std::vector<double>{5, 6, 1, 2, 0, 0, 5, 6});
  const auto d = grad(sum(g), a);
  CHECK(values(d) == std::vector<double>{1, 1, 0, 0, 2, 2});

  auto b = Tensor::variable({4, 1}, {1, 5, 2, 5});
  const std::vector<std::int64_t> seg = {0, 0, 1, 1};
  const auto mx = segment_max(b, seg, 2);
  CHECK(values(mx) == std::vector<double>{5, 5});
  // Ties resolve to the first maximiser.
  CHECK(values(grad(sum(mx), b)) == std::vector<double>{0, 1, 0, 1});
}

TEST_CASE("grid compose is a per-channel grid product") {
  // Two 2x2 grids in one instance, one channel: [[1,2],[3,4]] x [[5,6],[7,8]].
  const auto a = Tensor::constant({4, 1}, {1, 2, 3, 4});
  const auto b = Tensor::constant({4, 1}, {5, 6, 7, 8});
  CHECK(values(grid_compose(a, b, 2)) == std::vector<double>{19, 22, 43, 50});
  CHECK(values(grid_transpose(a, 2)) == std::vector<double>{1, 3, 2, 4});
  CHECK_THROWS_AS(grid_compose(a, Tensor::zeros({3, 1}), 2), ShapeError);

  // First and second order against finite differences.
  Rng rng(4);
  const std::size_t n = 3, rows = 2 * n * n, cols = 2;
  std::vector<double> x0(rows * cols), w(rows * cols);
  for (double& v : x0) v = rng.normal();
  for (double& v : w) v = rng.normal();
  auto f = [&](const Tensor& x) {
    const auto s = tanh(x);
    const auto c = grid_compose(s, grid_transpose(square(s), n), n);
    return sum(mul(c, Tensor::constant({rows, cols}, w)));
  };
  auto x = Tensor::variable({rows, cols}, x0);
  const auto analytic = values(grad(f(x), x, false));
  const auto numeric = testing::numeric_gradient(
      [&](const std::vector<double>& p) { return f(Tensor::constant({rows, cols}, p)).item(); }, x0, 1e-5);
  CHECK(testing::relative_error(analytic, numeric) < 1e-6);

  const auto first = grad(f(x), x, true);
  const auto hv = values(grad(sum(mul(first, Tensor::constant({rows, cols}, w))), x, false));
  const auto dir = testing::numeric_gradient(
      [&](const std::vector<double>& p) {
        auto leaf = Tensor::variable({rows, cols}, p);
        return sum(mul(grad(f(leaf), leaf, false), Tensor::constant({rows, cols}, w))).item();
      },
      x0, 1e-5);
  CHECK(testing::relative_error(hv, dir) < 1e-5);
}

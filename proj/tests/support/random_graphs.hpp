#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ired/rng.hpp"
#include "ired/tensor.hpp"

namespace ired::testing {

// Random scalar expression over one input vector, rebuilt on each call so it
// can be evaluated at perturbed points for finite differences.
struct RandomGraph {
  std::size_t input_dim = 0;
  std::function<Tensor(const Tensor&)> fn;
};

inline RandomGraph random_graph(std::uint64_t seed, int max_depth, bool smooth_only) {
  Rng rng(seed);
  RandomGraph g;
  g.input_dim = static_cast<std::size_t>(rng.uniform_int(2, 5));
  const int depth = static_cast<int>(rng.uniform_int(1, max_depth));
  struct Step {
    int op;
    double c;
    std::vector<double> w;
  };
  std::vector<Step> steps;
  const int ops = smooth_only ? 9 : 11;
  for (int d = 0; d < depth; ++d) {
    Step s{static_cast<int>(rng.uniform_int(0, ops - 1)), rng.uniform(0.3, 1.2), {}};
    s.w.resize(g.input_dim * g.input_dim);
    for (double& v : s.w) v = rng.uniform(-0.8, 0.8);
    steps.push_back(std::move(s));
  }
  const std::size_t n = g.input_dim;
  g.fn = [steps, n](const Tensor& x) {
    Tensor h = reshape(x, {1, n});
    const Tensor x_row = h;
    for (const Step& s : steps) {
      switch (s.op) {
        case 0: h = tanh(h); break;
        case 1: h = silu(h); break;
        case 2: h = softplus(h); break;
        case 3: h = sigmoid(h); break;
        case 4: h = mul(h, x_row); break;
        case 5: h = matmul(h, Tensor::constant({n, n}, s.w)); break;
        case 6: h = add(scale(h, s.c), square(h)); break;
        case 7: h = exp(scale(tanh(h), s.c)); break;
        case 8: h = sub(h, mul(Tensor::scalar(s.c), x_row)); break;
        case 9: h = log(add_scalar(square(h), 1.0)); break;
        default: h = concat_cols({slice_cols(h, 0, 1), slice_cols(add(h, x_row), 1, n)}); break;
      }
    }
    return add(sum(square(h)), scale(sum(h), 0.5));
  };
  return g;
}

inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
}

// Central differences of a scalar function of a flat vector.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    out[i] = (up - down) / (2 * h);
  }
  return out;
}

}  // namespace ired::testing

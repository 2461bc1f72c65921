#include <cmath>
#include <stdexcept>

#include "ired/energy.hpp"
#include "ired/rng.hpp"

namespace ired {

namespace {

using Index = std::vector<std::int64_t>;

std::size_t isqrt_exact(std::size_t v) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(v))));
  return r * r == v ? r : 0;
}

// Solves n^2 + 2n = x_dim for the planning input layout.
std::size_t plan_nodes(std::size_t x_dim) {
  const std::size_t n = isqrt_exact(x_dim + 1);
  return n >= 2 ? n - 1 : 0;
}

class ParamBuilder {
 public:
  ParamBuilder(std::vector<NamedTensor>& params, std::uint64_t seed, Init init)
      : params_(params), rng_(seed, {0x1a1d}), init_(init) {}

  void add(const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(rows * cols, 0.0);
    if (init_ == Init::kRandom) {
      for (double& x : v) x = rng_.uniform(-bound, bound);
    }
    params_.push_back({name, Tensor::variable({rows, cols}, std::move(v))});
  }
  void linear(const std::string& name, std::size_t in, std::size_t out) {
    add(name + ".weight", in, out, in);
    add(name + ".bias", 1, out, in);
  }

 private:
  std::vector<NamedTensor>& params_;
  Rng rng_;
  Init init_;
};

Tensor repeat_row(const Tensor& row, std::size_t n) { return gather_rows(row, Index(n, 0)); }

Tensor level_rows(const Tensor& table, std::span<const int> levels, std::size_t per_instance) {
  Index idx;
  idx.reserve(levels.size() * per_instance);
  for (int k : levels) idx.insert(idx.end(), per_instance, k);
  return gather_rows(table, std::move(idx));
}

// Sums a per-row column [B*per, 1] into per-instance energies [B, 1].
Tensor per_instance(const Tensor& col, std::size_t batch, std::size_t per) {
  Index idx(batch * per);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i / per);
  return scatter_add_rows(col, std::move(idx), batch);
}

class Net : public NetworkEnergy {
 public:
  using NetworkEnergy::NetworkEnergy;

 protected:
  const Tensor& p(const std::string& name) const { return param(name); }
  Tensor linear(const Tensor& h, const std::string& name) const {
    return add(matmul(h, p(name + ".weight")), repeat_row(p(name + ".bias"), h.dim(0)));
  }
  Tensor residual(const Tensor& h, const Tensor& u, const std::string& name) const {
    return add(h, linear(silu(linear(u, name + ".mix")), name + ".out"));
  }
};

// ---- mlp_energy ---------------------------------------------------------------------

class MlpEnergy final : public Net {
 public:
  MlpEnergy(ModelSpec spec, std::uint64_t seed, Init init) : Net(std::move(spec)) {
    ParamBuilder b(params_, seed, init);
    const std::size_t in = spec_.x_dim + spec_.y_dim, w = spec_.width;
    b.linear("layer0", in, w);
    for (std::size_t i = 1; i < spec_.depth; ++i) b.linear("layer" + std::to_string(i), w, w);
    b.linear("head", w, 1);
    b.add("level_embedding", static_cast<std::size_t>(spec_.levels) + 1, w, in);
  }

  Tensor energies(const Tensor& x, const Tensor& y, std::span<const int> levels) const override {
    check_inputs(x, y, levels);
    if (x.dim(1) != spec_.x_dim || y.dim(1) != spec_.y_dim) {
      throw ShapeError("mlp_energy: expected widths " + std::to_string(spec_.x_dim) + "/" +
                       std::to_string(spec_.y_dim) + ", got x " + shape_str(x.shape()) + ", y " +
                       shape_str(y.shape()));
    }
    Tensor h = add(linear(concat_cols({x, y}), "layer0"), level_rows(p("level_embedding"), levels, 1));
    h = silu(h);
    for (std::size_t i = 1; i < spec_.depth; ++i) h = silu(linear(h, "layer" + std::to_string(i)));
    return linear(h, "head");
  }

  std::unique_ptr<EnergyModel> clone() const override {
    auto m = std::make_unique<MlpEnergy>(*this);
    m->params_ = copy_parameters();
    return m;
  }
};

// ---- board_energy -----------------------------------------------------------------------
// Each cell of an n x n board is a row. Cell features are the candidate
// one-hot digit, the given digit one-hot and a given flag. Residual blocks mix
// every cell with the means of its row, column and box.

class BoardEnergy final : public Net {
 public:
  BoardEnergy(ModelSpec spec, std::uint64_t seed, Init init) : Net(std::move(spec)) {
    const std::size_t n = spec_.board_size, w = spec_.width;
    ParamBuilder b(params_, seed, init);
    b.linear("input", 2 * n + 1, w);
    b.add("position_embedding", n * n, w, 2 * n + 1);
    b.add("level_embedding", static_cast<std::size_t>(spec_.levels) + 1, w, 2 * n + 1);
    for (std::size_t i = 0; i < spec_.depth; ++i) {
      b.linear("block" + std::to_string(i) + ".mix", 4 * w, w);
      b.linear("block" + std::to_string(i) + ".out", w, w);
    }
    b.linear("head", w, n);
  }

  Tensor energies(const Tensor& x, const Tensor& y, std::span<const int> levels) const override {
    check_inputs(x, y, levels);
    const std::size_t n = spec_.board_size, cells = n * n, batch = x.dim(0);
    if (x.dim(1) != spec_.x_dim || y.dim(1) != spec_.y_dim) {
      throw ShapeError("board_energy: expected widths " + std::to_string(spec_.x_dim) + "/" +
                       std::to_string(spec_.y_dim) + ", got x " + shape_str(x.shape()) + ", y " +
                       shape_str(y.shape()));
    }
    const std::size_t box = isqrt_exact(n);
    const std::size_t rows = batch * cells;
    Index pos(rows), row_group(rows), col_group(rows), box_group(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t b = r / cells, c = r % cells, i = c / n, j = c % n;
      pos[r] = static_cast<std::int64_t>(c);
      row_group[r] = static_cast<std::int64_t>(b * n + i);
      col_group[r] = static_cast<std::int64_t>(b * n + j);
      box_group[r] = static_cast<std::int64_t>(b * n + (i / box) * box + j / box);
    }
    const Tensor cell_in = concat_cols({reshape(y, {rows, n}), reshape(x, {rows, n + 1})});
    Tensor h = add(linear(cell_in, "input"), gather_rows(p("position_embedding"), pos));
    h = add(h, level_rows(p("level_embedding"), levels, cells));
    const double inv = 1.0 / static_cast<double>(n);
    auto pool = [&](const Tensor& a, const Index& group) {
      return scale(gather_rows(scatter_add_rows(a, group, batch * n), group), inv);
    };
    for (std::size_t i = 0; i < spec_.depth; ++i) {
      const Tensor a = silu(h);
      const Tensor u = concat_cols({a, pool(a, row_group), pool(a, col_group), pool(a, box_group)});
      h = residual(h, u, "block" + std::to_string(i));
    }
    return l2_head_energy(linear(silu(h), "head"), batch, cells);
  }

  std::unique_ptr<EnergyModel> clone() const override {
    auto m = std::make_unique<BoardEnergy>(*this);
    m->params_ = copy_parameters();
    return m;
  }
};

// ---- edge_relational_energy -------------------------------------------------------------
// One row per ordered pair (i, j). Each round composes (i, k) with (k, j)
// features channel by channel and averages over intermediate nodes k. Node count is read
// from the input width, so one model serves graphs of any size.

class EdgeRelationalEnergy final : public Net {
 public:
  static constexpr std::size_t kFeatures = 5;

  EdgeRelationalEnergy(ModelSpec spec, std::uint64_t seed, Init init) : Net(std::move(spec)) {
    const std::size_t w = spec_.width;
    ParamBuilder b(params_, seed, init);
    b.linear("input", kFeatures, w);
    b.add("level_embedding", static_cast<std::size_t>(spec_.levels) + 1, w, kFeatures);
    for (std::size_t r = 0; r < spec_.depth; ++r) {
      const std::string name = "round" + std::to_string(r);
      b.add(name + ".left.weight", w, w, w);
      b.linear(name + ".right", w, w);
      b.linear(name + ".mix", 2 * w, w);
      b.linear(name + ".out", w, w);
    }
    b.linear("head", w, 1);
  }

  Tensor energies(const Tensor& x, const Tensor& y, std::span<const int> levels) const override {
    check_inputs(x, y, levels);
    const std::size_t n = isqrt_exact(x.dim(1));
    if (n < 2 || y.dim(1) != x.dim(1)) {
      throw ShapeError("edge_relational_energy: x " + shape_str(x.shape()) + " and y " + shape_str(y.shape()) +
                       " must both be n*n adjacency-shaped");
    }
    const std::size_t batch = x.dim(0), pairs = n * n, rows = batch * pairs;
    std::vector<double> diag(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) diag[r] = (r % pairs) / n == r % n ? 1.0 : 0.0;
    const Tensor a = reshape(x, {rows, 1});
    const Tensor yc = reshape(y, {rows, 1});
    const Tensor feats =
        concat_cols({a, grid_transpose(a, n), yc, grid_transpose(yc, n), Tensor::constant({rows, 1}, diag)});
    Tensor h = add(linear(feats, "input"), level_rows(p("level_embedding"), levels, pairs));
    const double norm = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < spec_.depth; ++r) {
      const std::string name = "round" + std::to_string(r);
      const Tensor s = silu(h);
      // Path composition i -> k -> j, one grid product per channel.
      const Tensor composed = scale(grid_compose(matmul(s, p(name + ".left.weight")), linear(s, name + ".right"), n), norm);
      h = residual(h, concat_cols({s, composed}), name);
    }
    return l2_head_energy(linear(silu(h), "head"), batch, pairs);
  }

  std::unique_ptr<EnergyModel> clone() const override {
    auto m = std::make_unique<EdgeRelationalEnergy>(*this);
    m->params_ = copy_parameters();
    return m;
  }
};

// ---- plan_relational_energy -------------------------------------------------------------
// One row per (timestep, node). Each layer sums features over out- and
// in-neighbours, then stacks the (t-1, t, t+1) results before a residual MLP.

class PlanRelationalEnergy final : public Net {
 public:
  static constexpr std::size_t kFeatures = 5;

  PlanRelationalEnergy(ModelSpec spec, std::uint64_t seed, Init init) : Net(std::move(spec)) {
    const std::size_t w = spec_.width;
    ParamBuilder b(params_, seed, init);
    b.linear("input", kFeatures, w);
    b.add("level_embedding", static_cast<std::size_t>(spec_.levels) + 1, w, kFeatures);
    for (std::size_t r = 0; r < spec_.depth; ++r) {
      const std::string name = "layer" + std::to_string(r);
      b.linear(name + ".mix", 9 * w, w);
      b.linear(name + ".out", w, w);
    }
    b.linear("head", w, 1);
  }

  Tensor energies(const Tensor& x, const Tensor& y, std::span<const int> levels) const override {
    check_inputs(x, y, levels);
    const std::size_t n = plan_nodes(x.dim(1));
    if (n < 2 || y.dim(1) % n != 0 || y.dim(1) == 0) {
      throw ShapeError("plan_relational_energy: x " + shape_str(x.shape()) + " is not adjacency+start+goal, or y " +
                       shape_str(y.shape()) + " is not [horizon*n]");
    }
    const std::size_t batch = x.dim(0), horizon = y.dim(1) / n, per = horizon * n, rows = batch * per;
    const std::size_t xw = x.dim(1);
    const auto xd = x.data();

    Index start_idx(rows), goal_idx(rows), prev(rows), next(rows);
    std::vector<double> first(rows, 0.0), last(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t b = r / per, t = (r % per) / n, i = r % n;
      start_idx[r] = static_cast<std::int64_t>(b * xw + n * n + i);
      goal_idx[r] = static_cast<std::int64_t>(b * xw + n * n + n + i);
      prev[r] = t == 0 ? -1 : static_cast<std::int64_t>(r - n);
      next[r] = t + 1 == horizon ? -1 : static_cast<std::int64_t>(r + n);
      first[r] = t == 0 ? 1.0 : 0.0;
      last[r] = t + 1 == horizon ? 1.0 : 0.0;
    }
    // Message routing follows the adjacency entries of x (> 0.5 is an edge).
    Index out_src, out_dst;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
          if (xd[b * xw + u * n + v] <= 0.5) continue;
          for (std::size_t t = 0; t < horizon; ++t) {
            out_src.push_back(static_cast<std::int64_t>(b * per + t * n + v));
            out_dst.push_back(static_cast<std::int64_t>(b * per + t * n + u));
          }
        }
      }
    }
    const Tensor feats = concat_cols({reshape(y, {rows, 1}), gather_elems(x, start_idx, {rows, 1}),
                                      gather_elems(x, goal_idx, {rows, 1}), Tensor::constant({rows, 1}, first),
                                      Tensor::constant({rows, 1}, last)});
    Tensor h = add(linear(feats, "input"), level_rows(p("level_embedding"), levels, per));
    for (std::size_t r = 0; r < spec_.depth; ++r) {
      const Tensor s = silu(h);
      Tensor out_msg, in_msg;
      if (out_src.empty()) {
        out_msg = Tensor::zeros(s.shape());
        in_msg = Tensor::zeros(s.shape());
      } else {
        out_msg = scatter_add_rows(gather_rows(s, out_src), out_dst, rows);
        in_msg = scatter_add_rows(gather_rows(s, out_dst), out_src, rows);
      }
      const Tensor g = concat_cols({s, out_msg, in_msg});
      const Tensor u = concat_cols({gather_rows(g, prev), g, gather_rows(g, next)});
      h = residual(h, u, "layer" + std::to_string(r));
    }
    return l2_head_energy(linear(silu(h), "head"), batch, per);
  }

  std::unique_ptr<EnergyModel> clone() const override {
    auto m = std::make_unique<PlanRelationalEnergy>(*this);
    m->params_ = copy_parameters();
    return m;
  }
};

}  // namespace

Tensor l2_head_energy(const Tensor& o, std::size_t batch, std::size_t rows_per_instance) {
  return scale(per_instance(row_sum(square(o)), batch, rows_per_instance), 0.5);
}

void ModelSpec::validate() const {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("model spec (" + to_string(arch) + "): " + why);
  };
  if (width < 1) fail("width must be >= 1");
  if (depth < 1) fail("depth must be >= 1");
  if (levels < 1) fail("levels must be >= 1");
  if (x_dim == 0 || y_dim == 0) fail("x_dim and y_dim must be positive");
  switch (arch) {
    case Architecture::kMlpEnergy:
      break;
    case Architecture::kBoardEnergy: {
      const std::size_t n = board_size;
      if (n < 1 || isqrt_exact(n) == 0) fail("board_size must be a perfect square");
      if (x_dim != n * n * (n + 1) || y_dim != n * n * n) {
        fail("board " + std::to_string(n) + "x" + std::to_string(n) + " needs x_dim " +
             std::to_string(n * n * (n + 1)) + " and y_dim " + std::to_string(n * n * n));
      }
      break;
    }
    case Architecture::kEdgeRelationalEnergy:
      if (isqrt_exact(x_dim) < 2 || y_dim != x_dim) fail("x_dim and y_dim must both equal n*n with n >= 2");
      break;
    case Architecture::kPlanRelationalEnergy: {
      const std::size_t n = plan_nodes(x_dim);
      if (n < 2 || n * n + 2 * n != x_dim) fail("x_dim must equal n*n + 2n");
      if (y_dim % n != 0) fail("y_dim must be horizon * n");
      break;
    }
  }
}

std::unique_ptr<NetworkEnergy> build(const ModelSpec& spec, std::uint64_t seed, Init init) {
  spec.validate();
  switch (spec.arch) {
    case Architecture::kMlpEnergy:
      return std::make_unique<MlpEnergy>(spec, seed, init);
    case Architecture::kBoardEnergy:
      return std::make_unique<BoardEnergy>(spec, seed, init);
    case Architecture::kEdgeRelationalEnergy:
      return std::make_unique<EdgeRelationalEnergy>(spec, seed, init);
    case Architecture::kPlanRelationalEnergy:
      return std::make_unique<PlanRelationalEnergy>(spec, seed, init);
  }
  throw std::invalid_argument("build: unknown architecture");
}

}  // namespace ired

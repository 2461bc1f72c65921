#include "ired/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace ired {

struct TensorAccess {
  static Tensor wrap(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }
  static Node& node(const Tensor& t) { return *t.node_; }
};

namespace {

thread_local bool t_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const Tensor& parent(const Tensor& out, std::size_t i) { return TensorAccess::node(out).parents[i]; }

Tensor make(const char* op, Shape shape, Buffer data, std::vector<Tensor> parents, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool track = t_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                  [](const Tensor& p) { return p.requires_grad(); });
  if (track) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
    node->requires_grad = true;
  }
  return TensorAccess::wrap(std::move(node));
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

// Sums a gradient back down to a broadcast operand's shape.
Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) {
    return g;
  }
  return reshape(sum(g), shape);
}

enum class Broadcast { kEqual, kScalarB, kScalarA };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) {
    return Broadcast::kEqual;
  }
  if (b.size() == 1) {
    return Broadcast::kScalarB;
  }
  if (a.size() == 1) {
    return Broadcast::kScalarA;
  }
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename F>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, BackwardFn backward) {
  const Broadcast kind = broadcast_kind(a, b, op);
  const auto da = a.data();
  const auto db = b.data();
  Shape shape = kind == Broadcast::kScalarA ? b.shape() : a.shape();
  Buffer out(shape_size(shape));
  switch (kind) {
    case Broadcast::kEqual:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i]);
      break;
    case Broadcast::kScalarB:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[0]);
      break;
    case Broadcast::kScalarA:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[0], db[i]);
      break;
  }
  return make(op, std::move(shape), std::move(out), {a, b}, std::move(backward));
}

template <typename F>
Tensor unary(const char* op, const Tensor& a, F f, BackwardFn backward) {
  const auto da = a.data();
  Buffer out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i]);
  return make(op, a.shape(), std::move(out), {a}, std::move(backward));
}

using ArrayMap = Eigen::Map<const Eigen::ArrayXd>;

// Elementwise op evaluated through Eigen array expressions (vectorised exp).
template <typename F>
Tensor unary_array(const char* op, const Tensor& a, F f, BackwardFn backward) {
  const auto da = a.data();
  Buffer out(da.size());
  if (!out.empty()) {
    const ArrayMap x(da.data(), static_cast<Eigen::Index>(da.size()));
    Eigen::Map<Eigen::ArrayXd>(out.data(), static_cast<Eigen::Index>(out.size())) = f(x);
  }
  return make(op, a.shape(), std::move(out), {a}, std::move(backward));
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void check_index(std::int64_t idx, std::size_t bound, const char* op) {
  if (idx < -1 || idx >= static_cast<std::int64_t>(bound)) {
    throw std::out_of_range(std::string(op) + ": index " + std::to_string(idx) + " out of range " +
                            std::to_string(bound));
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " + std::to_string(shape_size(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data.assign(data.begin(), data.end());
  return Tensor(std::move(node));
}

Tensor Tensor::variable(Shape shape, std::vector<double> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  t.node_->op = "leaf";
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

std::span<const double> Tensor::data() const { return node_->data; }

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return node_->data[0];
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) {
    throw std::logic_error("mutable_data: only leaf tensors may be written in place");
  }
  return node_->data;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->parents.empty(); }
std::string_view Tensor::op() const { return node_->op; }
Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = shape();
  node->data = node_->data;
  return Tensor(std::move(node));
}
std::vector<double> Tensor::to_vector() const { return {node_->data.begin(), node_->data.end()}; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---- Graph / grad ------------------------------------------------------------

Graph Graph::trace(const Tensor& output) {
  Graph g;
  if (!output.requires_grad()) {
    return g;
  }
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS; graphs from deep training losses are long.
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(output, 0);
  visited.insert(output.id());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& parents = TensorAccess::node(t).parents;
    if (next < parents.size()) {
      const Tensor& p = parents[next++];
      if (p.requires_grad() && visited.insert(p.id()).second) {
        stack.emplace_back(p, 0);
      }
      continue;
    }
    g.nodes_.push_back(t);
    stack.pop_back();
  }
  return g;
}

bool Graph::contains(const Tensor& t) const {
  return std::any_of(nodes_.begin(), nodes_.end(), [&](const Tensor& n) { return n.id() == t.id(); });
}

bool Graph::is_topological() const {
  std::unordered_map<const Node*, std::size_t> pos;
  for (std::size_t i = 0; i < nodes_.size(); ++i) pos[nodes_[i].id()] = i;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const Tensor& p : TensorAccess::node(nodes_[i]).parents) {
      auto it = pos.find(p.id());
      if (it != pos.end() && it->second >= i) {
        return false;
      }
    }
  }
  return true;
}

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, bool create_graph) {
  if (output.size() != 1) {
    throw ShapeError("grad: output must be a scalar, got shape " + shape_str(output.shape()));
  }
  std::optional<NoGradGuard> guard;
  if (!create_graph) {
    guard.emplace();
  }
  const Graph graph = Graph::trace(output);
  std::unordered_map<const Node*, Tensor> grads;
  if (output.requires_grad()) {
    grads.emplace(output.id(), Tensor::full(output.shape(), 1.0));
  }
  const auto nodes = graph.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const Tensor& t = *it;
    const Node& node = TensorAccess::node(t);
    auto found = grads.find(t.id());
    if (found == grads.end() || !node.backward) {
      continue;
    }
    const Tensor g = found->second;
    std::vector<Tensor> pg = node.backward(t, g);
    for (std::size_t i = 0; i < node.parents.size() && i < pg.size(); ++i) {
      const Tensor& p = node.parents[i];
      if (!p.requires_grad() || !pg[i].defined()) {
        continue;
      }
      auto [slot, inserted] = grads.try_emplace(p.id(), pg[i]);
      if (!inserted) {
        slot->second = add(slot->second, pg[i]);
      }
    }
  }
  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    auto found = grads.find(w.id());
    result.push_back(found == grads.end() ? Tensor::zeros(w.shape()) : found->second);
  }
  return result;
}

Tensor grad(const Tensor& output, const Tensor& wrt, bool create_graph) {
  return grad(output, std::span<const Tensor>(&wrt, 1), create_graph).front();
}

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                  return {reduce_to(g, parent(out, 0).shape()), reduce_to(g, parent(out, 1).shape())};
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                  return {reduce_to(g, parent(out, 0).shape()), reduce_to(neg(g), parent(out, 1).shape())};
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                  const Tensor& pa = parent(out, 0);
                  const Tensor& pb = parent(out, 1);
                  std::vector<Tensor> r(2);
                  if (pa.requires_grad()) r[0] = reduce_to(mul(g, pb), pa.shape());
                  if (pb.requires_grad()) r[1] = reduce_to(mul(g, pa), pb.shape());
                  return r;
                });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; },
               [factor](const Tensor&, const Tensor& g) -> std::vector<Tensor> { return {scale(g, factor)}; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary("add_scalar", a, [value](double x) { return x + value; },
               [](const Tensor&, const Tensor& g) -> std::vector<Tensor> { return {g}; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }
Tensor square(const Tensor& a) { return mul(a, a); }

Tensor sigmoid(const Tensor& a) {
  return unary_array("sigmoid", a, [](const ArrayMap& x) { return ((-x).exp() + 1.0).inverse(); },
                     [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                       return {mul(g, sub(out, square(out)))};
                     });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                 return {mul(g, add_scalar(neg(square(out)), 1.0))};
               });
}

Tensor softplus(const Tensor& a) {
  return unary("softplus", a, softplus_value, [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
    return {mul(g, sigmoid(parent(out, 0)))};
  });
}

namespace {

// Second derivative of silu, s (1 - s) (2 + x (1 - 2s)). Its own derivative is
// composed from recorded primitives, so higher orders remain available.
Tensor silu_second(const Tensor& a) {
  return unary_array(
      "silu_second", a,
      [](const ArrayMap& x) {
        const Eigen::ArrayXd s = ((-x).exp() + 1.0).inverse();
        return (s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))).eval();
      },
      [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
        // u [(1 - 2s)(3 + x (1 - 2s)) - 2 x u] with u = s (1 - s)
        const Tensor& x = parent(out, 0);
        const Tensor s = sigmoid(x);
        const Tensor u = sub(s, square(s));
        const Tensor v = add_scalar(scale(s, -2.0), 1.0);
        const Tensor inner = sub(mul(v, add_scalar(mul(x, v), 3.0)), scale(mul(x, u), 2.0));
        return {mul(g, mul(u, inner))};
      });
}

// First derivative of silu, s + x s (1 - s).
Tensor silu_first(const Tensor& a) {
  return unary_array(
      "silu_first", a,
      [](const ArrayMap& x) {
        const Eigen::ArrayXd s = ((-x).exp() + 1.0).inverse();
        return (s + x * s * (1.0 - s)).eval();
      },
      [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> { return {mul(g, silu_second(parent(out, 0)))}; });
}

}  // namespace

Tensor silu(const Tensor& a) {
  return unary_array("silu", a, [](const ArrayMap& x) { return x * ((-x).exp() + 1.0).inverse(); },
                     [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                       return {mul(g, silu_first(parent(out, 0)))};
                     });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> { return {mul(g, out)}; });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); },
               [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                 // 1/x written as exp(-log x) so the derivative stays recorded.
                 return {mul(g, exp(neg(out)))};
               });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
Tensor operator-(const Tensor& a) { return neg(a); }

// ---- linear algebra ------------------------------------------------------------

namespace {

// op(a) * op(b) where op transposes when the flag is set. The backward pass
// uses the same kernel so no explicit transposes are materialised.
Tensor gemm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = ta ? a.dim(1) : a.dim(0), n = ta ? a.dim(0) : a.dim(1);
  const std::size_t nb = tb ? b.dim(1) : b.dim(0), p = tb ? b.dim(0) : b.dim(1);
  if (nb != n) {
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + (ta ? "^T" : "") + " x " +
                     shape_str(b.shape()) + (tb ? "^T" : ""));
  }
  Buffer out(m * p);
  Eigen::Map<const RowMat> ma(a.data().data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
  Eigen::Map<const RowMat> mb(b.data().data(), static_cast<Eigen::Index>(b.dim(0)), static_cast<Eigen::Index>(b.dim(1)));
  Eigen::Map<RowMat> mc(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p));
  if (n == 0) {
    mc.setZero();
  } else if (!ta && !tb) {
    mc.noalias() = ma * mb;
  } else if (!ta && tb) {
    mc.noalias() = ma * mb.transpose();
  } else if (ta && !tb) {
    mc.noalias() = ma.transpose() * mb;
  } else {
    mc.noalias() = ma.transpose() * mb.transpose();
  }
  return make("matmul", {m, p}, std::move(out), {a, b},
              [ta, tb](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                const Tensor& pa = parent(out, 0);
                const Tensor& pb = parent(out, 1);
                std::vector<Tensor> r(2);
                if (pa.requires_grad()) {
                  if (!ta) {
                    r[0] = gemm(g, pb, false, !tb);
                  } else {
                    r[0] = gemm(pb, g, tb, true);
                  }
                }
                if (pb.requires_grad()) {
                  if (!tb) {
                    r[1] = gemm(pa, g, !ta, false);
                  } else {
                    r[1] = gemm(g, pa, true, ta);
                  }
                }
                return r;
              });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return gemm(a, b, false, false); }

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto d = a.data();
  Buffer out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  }
  return make("transpose", {c, r}, std::move(out), {a},
              [](const Tensor&, const Tensor& g) -> std::vector<Tensor> { return {transpose(g)}; });
}

// ---- reductions ------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  const auto d = a.data();
  const double s = std::accumulate(d.begin(), d.end(), 0.0);
  return make("sum", {}, {s}, {a}, [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
    return {mul(Tensor::full(parent(out, 0).shape(), 1.0), g)};
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) {
    throw ShapeError("mean: empty tensor");
  }
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sq_l2(const Tensor& a) {
  const auto d = a.data();
  double s = 0.0;
  for (double v : d) s += v * v;
  return make("sq_l2", {}, {s}, {a}, [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
    return {mul(scale(parent(out, 0), 2.0), g)};
  });
}

// ---- structure -------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make("reshape", std::move(shape), Buffer(a.data().begin(), a.data().end()), {a},
              [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                return {reshape(g, parent(out, 0).shape())};
              });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw ShapeError("concat_cols: no inputs");
  }
  const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    cols += p.dim(1);
  }
  Buffer out(rows * cols);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.dim(1);
    const auto d = p.data();
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(i * c), c,
                  out.begin() + static_cast<std::ptrdiff_t>(i * cols + offset));
    }
    offset += c;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make("concat_cols", {rows, cols}, std::move(out), std::move(parents),
              [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                const auto& ps = TensorAccess::node(out).parents;
                std::vector<Tensor> r(ps.size());
                std::size_t begin = 0;
                for (std::size_t i = 0; i < ps.size(); ++i) {
                  const std::size_t end = begin + ps[i].dim(1);
                  if (ps[i].requires_grad()) r[i] = slice_cols(g, begin, end);
                  begin = end;
                }
                return r;
              });
}

Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_cols");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (begin > end || end > cols) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                     shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  const auto d = a.data();
  Buffer out(rows * w);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(i * cols + begin), w,
                out.begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  return make("slice_cols", {rows, w}, std::move(out), {a},
              [begin, end](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                const Tensor& pa = parent(out, 0);
                const std::size_t r = pa.dim(0);
                std::vector<Tensor> pieces;
                if (begin > 0) pieces.push_back(Tensor::zeros({r, begin}));
                pieces.push_back(g);
                if (end < pa.dim(1)) pieces.push_back(Tensor::zeros({r, pa.dim(1) - end}));
                return {pieces.size() == 1 ? g : concat_cols(std::span<const Tensor>(pieces))};
              });
}

Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> index) {
  require_rank(a, 2, "gather_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto d = a.data();
  Buffer out(index.size() * cols, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    check_index(index[i], rows, "gather_rows");
    if (index[i] < 0) continue;
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(index[i]) * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  const std::size_t n = index.size();
  return make("gather_rows", {n, cols}, std::move(out), {a},
              [index = std::move(index)](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                return {scatter_add_rows(g, index, parent(out, 0).dim(0))};
              });
}

Tensor scatter_add_rows(const Tensor& a, std::vector<std::int64_t> index, std::size_t rows) {
  require_rank(a, 2, "scatter_add_rows");
  if (index.size() != a.dim(0)) {
    throw ShapeError("scatter_add_rows: " + std::to_string(index.size()) + " indices for " + shape_str(a.shape()));
  }
  const std::size_t cols = a.dim(1);
  const auto d = a.data();
  Buffer out(rows * cols, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    check_index(index[i], rows, "scatter_add_rows");
    if (index[i] < 0) continue;
    double* dst = out.data() + static_cast<std::size_t>(index[i]) * cols;
    const double* src = d.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
  }
  return make("scatter_add_rows", {rows, cols}, std::move(out), {a},
              [index = std::move(index)](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                return {gather_rows(g, index)};
              });
}

Tensor gather_elems(const Tensor& a, std::vector<std::int64_t> index, Shape shape) {
  if (shape_size(shape) != index.size()) {
    throw ShapeError("gather_elems: " + std::to_string(index.size()) + " indices for shape " + shape_str(shape));
  }
  const auto d = a.data();
  Buffer out(index.size(), 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    check_index(index[i], d.size(), "gather_elems");
    if (index[i] >= 0) out[i] = d[static_cast<std::size_t>(index[i])];
  }
  return make("gather_elems", std::move(shape), std::move(out), {a},
              [index = std::move(index)](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                return {scatter_add_elems(g, index, parent(out, 0).shape())};
              });
}

Tensor scatter_add_elems(const Tensor& a, std::vector<std::int64_t> index, Shape shape) {
  if (index.size() != a.size()) {
    throw ShapeError("scatter_add_elems: " + std::to_string(index.size()) + " indices for " + shape_str(a.shape()));
  }
  const auto d = a.data();
  Buffer out(shape_size(shape), 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    check_index(index[i], out.size(), "scatter_add_elems");
    if (index[i] >= 0) out[static_cast<std::size_t>(index[i])] += d[i];
  }
  return make("scatter_add_elems", std::move(shape), std::move(out), {a},
              [index = std::move(index)](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                return {gather_elems(g, index, parent(out, 0).shape())};
              });
}

Tensor segment_max(const Tensor& a, std::span<const std::int64_t> segment, std::size_t segments) {
  require_rank(a, 2, "segment_max");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (segment.size() != rows) {
    throw ShapeError("segment_max: " + std::to_string(segment.size()) + " segment ids for " + shape_str(a.shape()));
  }
  const auto d = a.data();
  Buffer out(segments * cols, -std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> arg(segments * cols, -1);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto s = static_cast<std::size_t>(segment[i]);
    if (segment[i] < 0 || s >= segments) {
      throw std::out_of_range("segment_max: segment id out of range");
    }
    for (std::size_t j = 0; j < cols; ++j) {
      // strict > keeps the first maximiser on ties
      if (d[i * cols + j] > out[s * cols + j]) {
        out[s * cols + j] = d[i * cols + j];
        arg[s * cols + j] = static_cast<std::int64_t>(i * cols + j);
      }
    }
  }
  if (std::find(arg.begin(), arg.end(), -1) != arg.end()) {
    throw ShapeError("segment_max: empty segment");
  }
  return make("segment_max", {segments, cols}, std::move(out), {a},
              [arg = std::move(arg)](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                return {scatter_add_elems(g, arg, parent(out, 0).shape())};
              });
}

Tensor row_sum(const Tensor& a) {
  require_rank(a, 2, "row_sum");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto d = a.data();
  Buffer out(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i] += d[i * cols + j];
  }
  return make("row_sum", {rows, 1}, std::move(out), {a}, [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
    const Tensor& pa = parent(out, 0);
    const std::size_t r = pa.dim(0), c = pa.dim(1);
    std::vector<std::int64_t> idx(r * c);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) idx[i * c + j] = static_cast<std::int64_t>(i);
    }
    return {gather_elems(g, std::move(idx), pa.shape())};
  });
}

Tensor grid_transpose(const Tensor& a, std::size_t n) {
  require_rank(a, 2, "grid_transpose");
  const std::size_t pairs = n * n;
  if (n == 0 || a.dim(0) % pairs != 0) {
    throw ShapeError("grid_transpose: " + shape_str(a.shape()) + " is not a stack of " + std::to_string(n) + "x" +
                     std::to_string(n) + " grids");
  }
  std::vector<std::int64_t> idx(a.dim(0));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const std::size_t b = r / pairs, i = (r % pairs) / n, j = r % n;
    idx[r] = static_cast<std::int64_t>(b * pairs + j * n + i);
  }
  return gather_rows(a, std::move(idx));
}

Tensor grid_compose(const Tensor& a, const Tensor& b, std::size_t n) {
  require_rank(a, 2, "grid_compose");
  const std::size_t pairs = n * n;
  if (a.shape() != b.shape() || n == 0 || a.dim(0) % pairs != 0) {
    throw ShapeError("grid_compose: " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " must be equal stacks of " + std::to_string(n) + "x" + std::to_string(n) + " grids");
  }
  const std::size_t grids = a.dim(0) / pairs, cols = a.dim(1);
  const auto da = a.data(), db = b.data();
  Buffer out(a.size(), 0.0);
  for (std::size_t g = 0; g < grids; ++g) {
    const std::size_t base = g * pairs * cols;
    for (std::size_t i = 0; i < n; ++i) {
      double* o = out.data() + base + i * n * cols;
      for (std::size_t k = 0; k < n; ++k) {
        const double* ar = da.data() + base + (i * n + k) * cols;
        const double* br = db.data() + base + k * n * cols;
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t c = 0; c < cols; ++c) o[j * cols + c] += ar[c] * br[j * cols + c];
        }
      }
    }
  }
  return make("grid_compose", a.shape(), std::move(out), {a, b},
              [n](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                const Tensor& pa = parent(out, 0);
                const Tensor& pb = parent(out, 1);
                return {grid_compose(g, grid_transpose(pb, n), n), grid_compose(grid_transpose(pa, n), g, n)};
              });
}

}  // namespace ired

#pragma once

// Dense row-major tensors of doubles with a reverse-mode differentiation
// record. Gradients produced by grad() are themselves recorded tensors, so
// gradient-of-gradient works by calling grad() again (reverse-over-reverse).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ired {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage. Vectorised kernels peel unaligned heads based on
// the address, so a fixed alignment keeps results bit-identical between runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data);
  // Leaf that participates in differentiation (a parameter or a solve variable).
  static Tensor variable(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;
  std::span<const double> data() const;
  double item() const;
  double at(std::size_t flat) const { return data()[flat]; }

  // Only leaves may be written in place; graphs built on top of a leaf see the
  // new values the next time they are rebuilt.
  std::span<double> mutable_data();

  bool requires_grad() const;
  bool is_leaf() const;
  std::string_view op() const;
  Tensor detach() const;
  std::vector<double> to_vector() const;

  const Node* id() const { return node_.get(); }

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Gradient propagation for one node. Receives the node itself and the
// incoming gradient, returns one gradient per parent (undefined = no flow).
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& out, const Tensor& grad_out)>;

struct Node {
  Shape shape;
  Buffer data;
  std::vector<Tensor> parents;
  BackwardFn backward;
  bool requires_grad = false;
  const char* op = "const";
};

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Topologically ordered record of the differentiable nodes reachable from an
// output. Parents always precede children.
class Graph {
 public:
  static Graph trace(const Tensor& output);
  std::span<const Tensor> nodes() const { return nodes_; }
  bool contains(const Tensor& t) const;
  bool is_topological() const;

 private:
  std::vector<Tensor> nodes_;
};

// Reverse-mode gradients of a scalar output. With create_graph the results
// are recorded and can be differentiated again. Leaves that do not reach the
// output get zeros of their shape.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, bool create_graph = true);
Tensor grad(const Tensor& output, const Tensor& wrt, bool create_graph = true);

// ---- elementwise ---------------------------------------------------------
// Binary ops accept equal shapes, or a size-1 operand broadcast over the other.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor operator-(const Tensor& a);

// ---- linear algebra ------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- reductions ----------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sq_l2(const Tensor& a);

// ---- structure -----------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(std::initializer_list<Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

// Row i of the result is row index[i] of a; index -1 yields a zero row.
Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> index);
// Row i of a is added into row index[i] of a rows-by-cols zero matrix; -1 drops it.
Tensor scatter_add_rows(const Tensor& a, std::vector<std::int64_t> index, std::size_t rows);
// Flat-element versions of the two above.
Tensor gather_elems(const Tensor& a, std::vector<std::int64_t> index, Shape shape);
Tensor scatter_add_elems(const Tensor& a, std::vector<std::int64_t> index, Shape shape);
// Column-wise max of the rows of a sharing a segment id, giving [segments, cols].
// Every segment must be non-empty.
Tensor segment_max(const Tensor& a, std::span<const std::int64_t> segment, std::size_t segments);

// Sums each row of a rank-2 tensor into a column [rows, 1].
Tensor row_sum(const Tensor& a);

// Rows of a and b are (instance, i, j) entries of per-instance n x n grids with
// one value per column (channel). Returns the per-channel grid product
// out[b,i,j,c] = sum_k a[b,i,k,c] * b[b,k,j,c].
Tensor grid_compose(const Tensor& a, const Tensor& b, std::size_t n);
// Swaps i and j within each instance grid.
Tensor grid_transpose(const Tensor& a, std::size_t n);

}  // namespace ired

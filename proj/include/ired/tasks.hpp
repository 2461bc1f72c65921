#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ired/tensor.hpp"

namespace ired {

enum class TaskFamily { kAddition, kCompletion, kInverse, kSudoku, kConnectivity, kShortestPath };
enum class Difficulty { kStandard, kHarder };

std::string to_string(TaskFamily family);
TaskFamily task_family_from_string(const std::string& name);
std::string to_string(Difficulty d);
Difficulty difficulty_from_string(const std::string& name);

// How an output vector is read back into a discrete answer.
struct OutputLayout {
  enum class Kind { kContinuous, kOneHot, kBinary };
  Kind kind = Kind::kContinuous;
  std::size_t group = 1;  // entries per one-hot group
};

struct TaskKind {
  TaskFamily family = TaskFamily::kAddition;
  std::size_t n = 8;        // matrix side or node count
  std::size_t rank = 2;     // completion only
  std::size_t order = 2;    // sudoku box side; boards are order^2 x order^2
  std::size_t horizon = 8;  // shortest path only

  std::size_t board_size() const { return order * order; }
  std::size_t x_dim() const;
  std::size_t y_dim() const;
  bool continuous() const;
  OutputLayout layout() const;
  void validate() const;
  bool operator==(const TaskKind&) const = default;
};

// Task-specific side information kept alongside an instance.
struct InstanceMeta {
  std::vector<int> givens;            // sudoku: given digit per cell (0 = blank)
  std::vector<int> adjacency;         // graphs: n*n 0/1
  std::vector<double> coords;         // graphs: 2 per node
  std::vector<int> distances;         // shortest path: all pairs, -1 = unreachable
  int start = -1;
  int goal = -1;
  double parameter = 0.0;             // magnitude / condition number used
};

struct ProblemInstance {
  TaskKind kind;
  Difficulty difficulty = Difficulty::kStandard;
  std::vector<double> x;
  std::vector<double> y_star;
  InstanceMeta meta;
};

// ---- generators ------------------------------------------------------------------
// Instance i of a stream draws from the substream (seed, i), so streams are
// reproducible and independent of count.

std::vector<ProblemInstance> gen_addition(std::size_t n, double magnitude, std::size_t count, std::uint64_t seed);

// U, V are n x rank with entries N(0, 1) * uv_scale / rank^(1/4), so var(M) = uv_scale^4.
// round(mask_frac * n^2) entries are hidden. x = [M * mask, mask], y* = M.
std::vector<ProblemInstance> gen_completion(std::size_t n, std::size_t rank, double mask_frac, double uv_scale,
                                            std::size_t count, std::uint64_t seed);

// A = Q1 diag(s) Q2 with singular values log-uniform in [c^-1/2, c^1/2] and both
// endpoints present, so cond(A) = c.
std::vector<ProblemInstance> gen_inverse(std::size_t n, double condition, std::size_t count, std::uint64_t seed);

std::vector<ProblemInstance> gen_sudoku(std::size_t order, int givens_min, int givens_max, std::size_t count,
                                        std::uint64_t seed);

// Points in the unit square, each node links to its k nearest others with
// k ~ U{1..max(1, max_out_degree)}; max_out_degree = 0 means n/2.
std::vector<ProblemInstance> gen_connectivity(std::size_t n, std::size_t count, std::uint64_t seed,
                                              std::size_t max_out_degree = 0);

// Same graph family (max_out_degree = 0 means n/2); start != goal with the goal
// reachable in at most horizon-1 steps.
std::vector<ProblemInstance> gen_shortest_path(std::size_t n, std::size_t horizon, std::size_t count,
                                               std::uint64_t seed, std::size_t max_out_degree = 0);

// ---- building blocks (also used directly by tests) --------------------------------

std::vector<int> random_geometric_digraph(std::size_t n, std::size_t max_out_degree, std::uint64_t seed,
                                          std::vector<double>* coords = nullptr);
// Transitive closure with self-reachability on the diagonal.
std::vector<int> floyd_warshall_reachability(std::span<const int> adjacency, std::size_t n);
std::vector<int> bfs_reachability(std::span<const int> adjacency, std::size_t n);
// Unit-length all-pairs distances, -1 when unreachable.
std::vector<int> floyd_warshall_distances(std::span<const int> adjacency, std::size_t n);
// Shortest path from start to goal (lowest-index parent on ties); empty if unreachable.
std::vector<int> bfs_path(std::span<const int> adjacency, std::size_t n, int start, int goal);

// One-hot / digit conversions for boards of n x n cells with digits 1..n.
bool sudoku_board_valid(std::span<const int> digits, std::size_t n);
std::vector<int> solve_sudoku(std::span<const int> givens, std::size_t n);  // empty if unsolvable
std::vector<int> decode_one_hot(std::span<const double> y, std::size_t group);  // argmax per group, 1-based

// Partial-pivot Gauss-Jordan inverse of a row-major n x n matrix.
std::vector<double> invert_matrix(std::span<const double> a, std::size_t n);

// ---- oracles and metrics --------------------------------------------------------

bool validate_instance(const ProblemInstance& inst);

// Exact answer recovered from the input alone (not available for completion).
std::vector<double> solve_exact(const TaskKind& kind, std::span<const double> x);

// addition/completion/inverse: elementwise MSE (lower is better).
// sudoku: 1 if the board is a valid completion of the givens.
// connectivity: fraction of entries equal to y*.
// shortest_path: 1 if the first move goes to an out-neighbour of the start
// strictly closer to the goal.
// y_pred for discrete tasks must already be discretized.
double metric(const ProblemInstance& inst, std::span<const double> y_pred);
// Connectivity: 1 if every entry matches.
double graph_exact_match(const ProblemInstance& inst, std::span<const double> y_pred);
bool higher_is_better(TaskFamily family);

// Expected first-action success of moving to a uniformly random out-neighbour.
double random_first_move_success(const ProblemInstance& inst);

// Row-stacks instance inputs / labels into [B, dim] tensors.
Tensor stack_x(std::span<const ProblemInstance> batch);
Tensor stack_y(std::span<const ProblemInstance> batch);

}  // namespace ired

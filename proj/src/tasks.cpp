#include "ired/tasks.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <stdexcept>

#include "ired/rng.hpp"

namespace ired {

namespace {

constexpr std::uint64_t kStreamAddition = 0xadd;
constexpr std::uint64_t kStreamCompletion = 0xc0e;
constexpr std::uint64_t kStreamInverse = 0x1e5;
constexpr std::uint64_t kStreamSudoku = 0x5d0;
constexpr std::uint64_t kStreamConnectivity = 0xc0c;
constexpr std::uint64_t kStreamPath = 0x9a7;
constexpr int kPathRetries = 1000;

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> flatten(const Mat& m) { return {m.data(), m.data() + m.size()}; }

Mat random_orthogonal(std::size_t n, Rng& rng) {
  Mat g(n, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  const Mat r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

std::vector<double> one_hot_rows(std::span<const int> values, std::size_t group) {
  std::vector<double> out(values.size() * group, 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i * group + static_cast<std::size_t>(values[i])] = 1.0;
  }
  return out;
}

bool fill_board(std::vector<int>& board, std::size_t n, std::size_t cell, Rng* rng) {
  const std::size_t cells = n * n;
  while (cell < cells && board[cell] != 0) ++cell;
  if (cell == cells) return true;
  std::vector<int> digits(n);
  std::iota(digits.begin(), digits.end(), 1);
  if (rng) std::shuffle(digits.begin(), digits.end(), rng->engine());
  const std::size_t box = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  const std::size_t r = cell / n, c = cell % n;
  for (int d : digits) {
    bool ok = true;
    for (std::size_t k = 0; k < n && ok; ++k) {
      if (board[r * n + k] == d || board[k * n + c] == d) ok = false;
    }
    const std::size_t br = r / box * box, bc = c / box * box;
    for (std::size_t i = 0; i < box && ok; ++i) {
      for (std::size_t j = 0; j < box && ok; ++j) {
        if (board[(br + i) * n + bc + j] == d) ok = false;
      }
    }
    if (!ok) continue;
    board[cell] = d;
    if (fill_board(board, n, cell + 1, rng)) return true;
    board[cell] = 0;
  }
  return false;
}

std::vector<int> adjacency_from_x(std::span<const double> x, std::size_t n) {
  std::vector<int> a(n * n);
  for (std::size_t i = 0; i < n * n; ++i) a[i] = x[i] > 0.5 ? 1 : 0;
  return a;
}

std::vector<int> givens_from_x(std::span<const double> x, std::size_t n) {
  const std::size_t cells = n * n;
  std::vector<int> givens(cells, 0);
  for (std::size_t c = 0; c < cells; ++c) {
    const auto cell = x.subspan(c * (n + 1), n + 1);
    if (cell[n] > 0.5) {
      givens[c] = static_cast<int>(std::max_element(cell.begin(), cell.begin() + static_cast<std::ptrdiff_t>(n)) -
                                   cell.begin()) +
                  1;
    }
  }
  return givens;
}

int argmax_index(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> path_rows(std::span<const int> path, std::size_t n, std::size_t horizon) {
  std::vector<double> y(horizon * n, 0.0);
  for (std::size_t t = 0; t < horizon; ++t) {
    const int node = t < path.size() ? path[t] : path.back();
    y[t * n + static_cast<std::size_t>(node)] = 1.0;
  }
  return y;
}

}  // namespace

// ---- names -------------------------------------------------------------------------

std::string to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::kAddition:
      return "addition";
    case TaskFamily::kCompletion:
      return "completion";
    case TaskFamily::kInverse:
      return "inverse";
    case TaskFamily::kSudoku:
      return "sudoku";
    case TaskFamily::kConnectivity:
      return "connectivity";
    case TaskFamily::kShortestPath:
      return "shortest_path";
  }
  return "unknown";
}

TaskFamily task_family_from_string(const std::string& name) {
  for (TaskFamily f : {TaskFamily::kAddition, TaskFamily::kCompletion, TaskFamily::kInverse, TaskFamily::kSudoku,
                       TaskFamily::kConnectivity, TaskFamily::kShortestPath}) {
    if (to_string(f) == name) return f;
  }
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

std::string to_string(Difficulty d) { return d == Difficulty::kStandard ? "standard" : "harder"; }

Difficulty difficulty_from_string(const std::string& name) {
  if (name == "standard") return Difficulty::kStandard;
  if (name == "harder") return Difficulty::kHarder;
  throw std::invalid_argument("unknown difficulty '" + name + "'");
}

// ---- TaskKind ----------------------------------------------------------------------

std::size_t TaskKind::x_dim() const {
  switch (family) {
    case TaskFamily::kAddition:
    case TaskFamily::kCompletion:
      return 2 * n * n;
    case TaskFamily::kInverse:
    case TaskFamily::kConnectivity:
      return n * n;
    case TaskFamily::kSudoku:
      return board_size() * board_size() * (board_size() + 1);
    case TaskFamily::kShortestPath:
      return n * n + 2 * n;
  }
  return 0;
}

std::size_t TaskKind::y_dim() const {
  switch (family) {
    case TaskFamily::kSudoku:
      return board_size() * board_size() * board_size();
    case TaskFamily::kShortestPath:
      return horizon * n;
    default:
      return n * n;
  }
}

bool TaskKind::continuous() const {
  return family == TaskFamily::kAddition || family == TaskFamily::kCompletion || family == TaskFamily::kInverse;
}

OutputLayout TaskKind::layout() const {
  switch (family) {
    case TaskFamily::kSudoku:
      return {OutputLayout::Kind::kOneHot, board_size()};
    case TaskFamily::kShortestPath:
      return {OutputLayout::Kind::kOneHot, n};
    case TaskFamily::kConnectivity:
      return {OutputLayout::Kind::kBinary, 1};
    default:
      return {OutputLayout::Kind::kContinuous, 1};
  }
}

void TaskKind::validate() const {
  auto fail = [&](const std::string& why) { throw std::invalid_argument(to_string(family) + ": " + why); };
  switch (family) {
    case TaskFamily::kAddition:
    case TaskFamily::kInverse:
      if (n < 1) fail("n must be >= 1");
      break;
    case TaskFamily::kCompletion:
      if (n < 1) fail("n must be >= 1");
      if (rank < 1 || rank > n) fail("rank must be in 1..n");
      break;
    case TaskFamily::kSudoku:
      if (order != 2 && order != 3) fail("order must be 2 or 3");
      break;
    case TaskFamily::kConnectivity:
      if (n < 2) fail("n must be >= 2");
      break;
    case TaskFamily::kShortestPath:
      if (n < 2) fail("n must be >= 2");
      if (horizon < 2) fail("horizon must be >= 2");
      break;
  }
}

// ---- continuous generators ---------------------------------------------------------

std::vector<ProblemInstance> gen_addition(std::size_t n, double magnitude, std::size_t count, std::uint64_t seed) {
  if (n < 1 || !(magnitude > 0)) throw std::invalid_argument("gen_addition: need n >= 1 and magnitude > 0");
  std::vector<ProblemInstance> out;
  out.reserve(count);
  const std::size_t m = n * n;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, {kStreamAddition, i});
    ProblemInstance inst;
    inst.kind = {TaskFamily::kAddition, n};
    inst.meta.parameter = magnitude;
    inst.x.resize(2 * m);
    for (double& v : inst.x) v = rng.uniform(-magnitude, magnitude);
    inst.y_star.resize(m);
    for (std::size_t j = 0; j < m; ++j) inst.y_star[j] = inst.x[j] + inst.x[m + j];
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<ProblemInstance> gen_completion(std::size_t n, std::size_t rank, double mask_frac, double uv_scale,
                                            std::size_t count, std::uint64_t seed) {
  if (rank > n || rank < 1) throw std::invalid_argument("gen_completion: rank must be in 1..n");
  if (!(mask_frac >= 0.0 && mask_frac < 1.0)) throw std::invalid_argument("gen_completion: mask_frac must be in [0,1)");
  std::vector<ProblemInstance> out;
  out.reserve(count);
  const std::size_t m = n * n;
  const double s = uv_scale / std::pow(static_cast<double>(rank), 0.25);
  const auto hidden = static_cast<std::size_t>(std::lround(mask_frac * static_cast<double>(m)));
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, {kStreamCompletion, i});
    Mat u(n, rank), v(n, rank);
    for (Eigen::Index j = 0; j < u.size(); ++j) u.data()[j] = s * rng.normal();
    for (Eigen::Index j = 0; j < v.size(); ++j) v.data()[j] = s * rng.normal();
    const Mat mat = u * v.transpose();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::vector<double> mask(m, 1.0);
    for (std::size_t j = 0; j < hidden; ++j) mask[order[j]] = 0.0;
    ProblemInstance inst;
    inst.kind = {TaskFamily::kCompletion, n, rank};
    inst.meta.parameter = uv_scale;
    inst.y_star = flatten(mat);
    inst.x.resize(2 * m);
    for (std::size_t j = 0; j < m; ++j) {
      inst.x[j] = inst.y_star[j] * mask[j];
      inst.x[m + j] = mask[j];
    }
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<ProblemInstance> gen_inverse(std::size_t n, double condition, std::size_t count, std::uint64_t seed) {
  if (n < 1 || !(condition >= 1.0)) throw std::invalid_argument("gen_inverse: need n >= 1 and condition >= 1");
  std::vector<ProblemInstance> out;
  out.reserve(count);
  const double half_log = 0.5 * std::log(condition);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, {kStreamInverse, i});
    const Mat q1 = random_orthogonal(n, rng);
    const Mat q2 = random_orthogonal(n, rng);
    Eigen::VectorXd s(static_cast<Eigen::Index>(n));
    for (Eigen::Index j = 0; j < s.size(); ++j) s[j] = std::exp(rng.uniform(-half_log, half_log));
    if (n >= 2) {
      s[0] = std::exp(half_log);
      s[1] = std::exp(-half_log);
    }
    const Mat a = q1 * s.asDiagonal() * q2.transpose();
    ProblemInstance inst;
    inst.kind = {TaskFamily::kInverse, n};
    inst.meta.parameter = condition;
    inst.x = flatten(a);
    inst.y_star = invert_matrix(inst.x, n);
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<double> invert_matrix(std::span<const double> a, std::size_t n) {
  if (a.size() != n * n) throw ShapeError("invert_matrix: expected " + std::to_string(n * n) + " entries");
  std::vector<double> m(a.begin(), a.end());
  std::vector<double> inv(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m[r * n + col]) > std::abs(m[pivot * n + col])) pivot = r;
    }
    if (m[pivot * n + col] == 0.0) throw std::domain_error("invert_matrix: singular matrix");
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(m[pivot * n + j], m[col * n + j]);
        std::swap(inv[pivot * n + j], inv[col * n + j]);
      }
    }
    const double d = m[col * n + col];
    for (std::size_t j = 0; j < n; ++j) {
      m[col * n + j] /= d;
      inv[col * n + j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m[r * n + col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        m[r * n + j] -= f * m[col * n + j];
        inv[r * n + j] -= f * inv[col * n + j];
      }
    }
  }
  return inv;
}

// ---- sudoku ------------------------------------------------------------------------

bool sudoku_board_valid(std::span<const int> digits, std::size_t n) {
  if (digits.size() != n * n) return false;
  const std::size_t box = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  auto is_perm = [&](auto cell_of) {
    std::vector<bool> seen(n + 1, false);
    for (std::size_t k = 0; k < n; ++k) {
      const int d = digits[cell_of(k)];
      if (d < 1 || d > static_cast<int>(n) || seen[static_cast<std::size_t>(d)]) return false;
      seen[static_cast<std::size_t>(d)] = true;
    }
    return true;
  };
  for (std::size_t u = 0; u < n; ++u) {
    if (!is_perm([&](std::size_t k) { return u * n + k; })) return false;
    if (!is_perm([&](std::size_t k) { return k * n + u; })) return false;
    const std::size_t br = u / box * box, bc = u % box * box;
    if (!is_perm([&](std::size_t k) { return (br + k / box) * n + bc + k % box; })) return false;
  }
  return true;
}

std::vector<int> solve_sudoku(std::span<const int> givens, std::size_t n) {
  std::vector<int> board(givens.begin(), givens.end());
  if (!fill_board(board, n, 0, nullptr)) return {};
  // fill_board does not re-check clashes among givens themselves.
  return sudoku_board_valid(board, n) ? board : std::vector<int>{};
}

std::vector<int> decode_one_hot(std::span<const double> y, std::size_t group) {
  std::vector<int> out(y.size() / group);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_index(y.subspan(i * group, group)) + 1;
  return out;
}

std::vector<ProblemInstance> gen_sudoku(std::size_t order, int givens_min, int givens_max, std::size_t count,
                                        std::uint64_t seed) {
  if (order != 2 && order != 3) throw std::invalid_argument("gen_sudoku: order must be 2 or 3");
  const std::size_t n = order * order, cells = n * n;
  if (givens_min < 0 || givens_min > givens_max || givens_max > static_cast<int>(cells)) {
    throw std::invalid_argument("gen_sudoku: infeasible givens range [" + std::to_string(givens_min) + ", " +
                                std::to_string(givens_max) + "] for " + std::to_string(cells) + " cells");
  }
  std::vector<ProblemInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, {kStreamSudoku, i});
    std::vector<int> solution(cells, 0);
    fill_board(solution, n, 0, &rng);
    const auto target = static_cast<std::size_t>(rng.uniform_int(givens_min, givens_max));
    std::vector<std::size_t> order_cells(cells);
    std::iota(order_cells.begin(), order_cells.end(), 0);
    std::shuffle(order_cells.begin(), order_cells.end(), rng.engine());
    // Blanking cells of a complete valid board always leaves it solvable.
    std::vector<int> givens = solution;
    for (std::size_t j = 0; j < cells - target; ++j) givens[order_cells[j]] = 0;

    ProblemInstance inst;
    inst.kind = {TaskFamily::kSudoku, n, 2, order};
    inst.meta.givens = givens;
    inst.meta.parameter = static_cast<double>(target);
    inst.x.assign(cells * (n + 1), 0.0);
    for (std::size_t c = 0; c < cells; ++c) {
      if (givens[c] == 0) continue;
      inst.x[c * (n + 1) + static_cast<std::size_t>(givens[c] - 1)] = 1.0;
      inst.x[c * (n + 1) + n] = 1.0;
    }
    std::vector<int> zero_based(cells);
    for (std::size_t c = 0; c < cells; ++c) zero_based[c] = solution[c] - 1;
    inst.y_star = one_hot_rows(zero_based, n);
    out.push_back(std::move(inst));
  }
  return out;
}

// ---- graphs ------------------------------------------------------------------------

std::vector<int> random_geometric_digraph(std::size_t n, std::size_t max_out_degree, std::uint64_t seed,
                                          std::vector<double>* coords) {
  Rng rng(seed);
  std::vector<double> pts(2 * n);
  for (double& p : pts) p = rng.uniform();
  std::vector<int> adj(n * n, 0);
  const auto hi = static_cast<std::int64_t>(std::max<std::size_t>(1, max_out_degree));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(std::min<std::int64_t>(rng.uniform_int(1, hi),
                                                                   static_cast<std::int64_t>(n - 1)));
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(j);
    }
    auto d2 = [&](std::size_t j) {
      const double dx = pts[2 * i] - pts[2 * j], dy = pts[2 * i + 1] - pts[2 * j + 1];
      return dx * dx + dy * dy;
    };
    std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) { return d2(a) < d2(b); });
    for (std::size_t j = 0; j < k; ++j) adj[i * n + others[j]] = 1;
  }
  if (coords) *coords = std::move(pts);
  return adj;
}

std::vector<int> floyd_warshall_reachability(std::span<const int> adjacency, std::size_t n) {
  std::vector<int> r(adjacency.begin(), adjacency.end());
  for (std::size_t i = 0; i < n; ++i) r[i * n + i] = 1;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!r[i * n + k]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (r[k * n + j]) r[i * n + j] = 1;
      }
    }
  }
  return r;
}

std::vector<int> bfs_reachability(std::span<const int> adjacency, std::size_t n) {
  std::vector<int> r(n * n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    std::queue<std::size_t> q;
    q.push(s);
    r[s * n + s] = 1;
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop();
      for (std::size_t v = 0; v < n; ++v) {
        if (adjacency[u * n + v] && !r[s * n + v]) {
          r[s * n + v] = 1;
          q.push(v);
        }
      }
    }
  }
  return r;
}

std::vector<int> floyd_warshall_distances(std::span<const int> adjacency, std::size_t n) {
  const int inf = static_cast<int>(n) + 1;
  std::vector<int> d(n * n, inf);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) {
        d[i * n + j] = 0;
      } else if (adjacency[i * n + j]) {
        d[i * n + j] = 1;
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        d[i * n + j] = std::min(d[i * n + j], d[i * n + k] + d[k * n + j]);
      }
    }
  }
  for (int& v : d) {
    if (v >= inf) v = -1;
  }
  return d;
}

std::vector<int> bfs_path(std::span<const int> adjacency, std::size_t n, int start, int goal) {
  std::vector<int> parent(n, -2);
  std::queue<int> q;
  q.push(start);
  parent[static_cast<std::size_t>(start)] = -1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    if (u == goal) break;
    for (std::size_t v = 0; v < n; ++v) {
      if (adjacency[static_cast<std::size_t>(u) * n + v] && parent[v] == -2) {
        parent[v] = u;
        q.push(static_cast<int>(v));
      }
    }
  }
  if (parent[static_cast<std::size_t>(goal)] == -2) return {};
  std::vector<int> path;
  for (int v = goal; v != -1; v = parent[static_cast<std::size_t>(v)]) path.push_back(v);
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<ProblemInstance> gen_connectivity(std::size_t n, std::size_t count, std::uint64_t seed,
                                              std::size_t max_out_degree) {
  if (n < 2) throw std::invalid_argument("gen_connectivity: n must be >= 2");
  const std::size_t max_deg = max_out_degree == 0 ? n / 2 : max_out_degree;
  std::vector<ProblemInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ProblemInstance inst;
    inst.kind = {TaskFamily::kConnectivity, n};
    inst.meta.adjacency = random_geometric_digraph(n, max_deg, derive_seed(seed, {kStreamConnectivity, i}),
                                                   &inst.meta.coords);
    const auto reach = floyd_warshall_reachability(inst.meta.adjacency, n);
    inst.x.assign(inst.meta.adjacency.begin(), inst.meta.adjacency.end());
    inst.y_star.assign(reach.begin(), reach.end());
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<ProblemInstance> gen_shortest_path(std::size_t n, std::size_t horizon, std::size_t count,
                                               std::uint64_t seed, std::size_t max_out_degree) {
  if (n < 2 || horizon < 2) throw std::invalid_argument("gen_shortest_path: need n >= 2 and horizon >= 2");
  const std::size_t max_deg = max_out_degree == 0 ? n / 2 : max_out_degree;
  std::vector<ProblemInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    bool found = false;
    for (int attempt = 0; attempt < kPathRetries && !found; ++attempt) {
      const std::uint64_t s = derive_seed(seed, {kStreamPath, i, static_cast<std::uint64_t>(attempt)});
      ProblemInstance inst;
      inst.kind = {TaskFamily::kShortestPath, n, 2, 2, horizon};
      inst.meta.adjacency = random_geometric_digraph(n, max_deg, s, &inst.meta.coords);
      inst.meta.distances = floyd_warshall_distances(inst.meta.adjacency, n);
      Rng rng(s, {1});
      const auto start = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      const auto goal = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      const int d = inst.meta.distances[static_cast<std::size_t>(start) * n + static_cast<std::size_t>(goal)];
      if (start == goal || d < 1 || d > static_cast<int>(horizon) - 1) continue;
      inst.meta.start = start;
      inst.meta.goal = goal;
      inst.x.assign(n * n + 2 * n, 0.0);
      for (std::size_t j = 0; j < n * n; ++j) inst.x[j] = inst.meta.adjacency[j];
      inst.x[n * n + static_cast<std::size_t>(start)] = 1.0;
      inst.x[n * n + n + static_cast<std::size_t>(goal)] = 1.0;
      inst.y_star = path_rows(bfs_path(inst.meta.adjacency, n, start, goal), n, horizon);
      out.push_back(std::move(inst));
      found = true;
    }
    if (!found) {
      throw std::runtime_error("gen_shortest_path: no reachable start/goal pair within horizon " +
                               std::to_string(horizon) + " after " + std::to_string(kPathRetries) +
                               " attempts (instance " + std::to_string(i) + ")");
    }
  }
  return out;
}

// ---- oracles -----------------------------------------------------------------------

std::vector<double> solve_exact(const TaskKind& kind, std::span<const double> x) {
  if (x.size() != kind.x_dim()) {
    throw ShapeError("solve_exact: expected x of width " + std::to_string(kind.x_dim()) + ", got " +
                     std::to_string(x.size()));
  }
  const std::size_t n = kind.n;
  switch (kind.family) {
    case TaskFamily::kAddition: {
      std::vector<double> y(n * n);
      for (std::size_t j = 0; j < n * n; ++j) y[j] = x[j] + x[n * n + j];
      return y;
    }
    case TaskFamily::kInverse:
      return invert_matrix(x, n);
    case TaskFamily::kCompletion:
      throw std::invalid_argument("solve_exact: completion has no closed-form answer from masked input");
    case TaskFamily::kSudoku: {
      const std::size_t b = kind.board_size();
      const auto board = solve_sudoku(givens_from_x(x, b), b);
      if (board.empty()) throw std::domain_error("solve_exact: sudoku has no solution");
      std::vector<int> zero_based(board.size());
      for (std::size_t c = 0; c < board.size(); ++c) zero_based[c] = board[c] - 1;
      return one_hot_rows(zero_based, b);
    }
    case TaskFamily::kConnectivity: {
      const auto r = floyd_warshall_reachability(adjacency_from_x(x, n), n);
      return {r.begin(), r.end()};
    }
    case TaskFamily::kShortestPath: {
      const int start = argmax_index(x.subspan(n * n, n));
      const int goal = argmax_index(x.subspan(n * n + n, n));
      const auto path = bfs_path(adjacency_from_x(x, n), n, start, goal);
      if (path.empty()) throw std::domain_error("solve_exact: goal unreachable");
      return path_rows(path, n, kind.horizon);
    }
  }
  return {};
}

bool validate_instance(const ProblemInstance& inst) {
  const TaskKind& k = inst.kind;
  if (inst.x.size() != k.x_dim() || inst.y_star.size() != k.y_dim()) return false;
  const std::size_t n = k.n;
  switch (k.family) {
    case TaskFamily::kAddition:
      return solve_exact(k, inst.x) == inst.y_star;
    case TaskFamily::kCompletion:
      for (std::size_t j = 0; j < n * n; ++j) {
        const double mask = inst.x[n * n + j];
        if (mask != 0.0 && mask != 1.0) return false;
        if (inst.x[j] != inst.y_star[j] * mask) return false;
      }
      return true;
    case TaskFamily::kInverse: {
      Eigen::Map<const Mat> a(inst.x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      Eigen::Map<const Mat> y(inst.y_star.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      const Mat residual = a * y - Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      return residual.cwiseAbs().maxCoeff() < 1e-8;
    }
    case TaskFamily::kSudoku: {
      const std::size_t b = k.board_size();
      for (double v : inst.y_star) {
        if (v != 0.0 && v != 1.0) return false;
      }
      for (std::size_t c = 0; c < b * b; ++c) {
        double s = 0;
        for (std::size_t d = 0; d < b; ++d) s += inst.y_star[c * b + d];
        if (s != 1.0) return false;
      }
      const auto digits = decode_one_hot(inst.y_star, b);
      const auto givens = givens_from_x(inst.x, b);
      for (std::size_t c = 0; c < givens.size(); ++c) {
        if (givens[c] != 0 && givens[c] != digits[c]) return false;
      }
      return sudoku_board_valid(digits, b);
    }
    case TaskFamily::kConnectivity: {
      const auto r = bfs_reachability(adjacency_from_x(inst.x, n), n);
      for (std::size_t j = 0; j < n * n; ++j) {
        if (static_cast<double>(r[j]) != inst.y_star[j]) return false;
      }
      return true;
    }
    case TaskFamily::kShortestPath: {
      const auto adj = adjacency_from_x(inst.x, n);
      const int start = argmax_index(std::span<const double>(inst.x).subspan(n * n, n));
      const int goal = argmax_index(std::span<const double>(inst.x).subspan(n * n + n, n));
      const auto dist = floyd_warshall_distances(adj, n);
      const int d = dist[static_cast<std::size_t>(start) * n + static_cast<std::size_t>(goal)];
      if (d < 0 || d > static_cast<int>(k.horizon) - 1) return false;
      for (double v : inst.y_star) {
        if (v != 0.0 && v != 1.0) return false;
      }
      const auto nodes = decode_one_hot(inst.y_star, n);
      for (std::size_t t = 0; t < k.horizon; ++t) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += inst.y_star[t * n + j];
        if (s != 1.0) return false;
      }
      if (nodes[0] - 1 != start) return false;
      for (std::size_t t = 1; t < k.horizon; ++t) {
        const int prev = nodes[t - 1] - 1, cur = nodes[t] - 1;
        if (static_cast<int>(t) <= d) {
          if (!adj[static_cast<std::size_t>(prev) * n + static_cast<std::size_t>(cur)]) return false;
        } else if (cur != goal) {
          return false;
        }
      }
      return nodes[static_cast<std::size_t>(d)] - 1 == goal;
    }
  }
  return false;
}

bool higher_is_better(TaskFamily family) {
  return !(family == TaskFamily::kAddition || family == TaskFamily::kCompletion || family == TaskFamily::kInverse);
}

double metric(const ProblemInstance& inst, std::span<const double> y_pred) {
  const TaskKind& k = inst.kind;
  if (y_pred.size() != inst.y_star.size()) {
    throw ShapeError("metric: prediction has " + std::to_string(y_pred.size()) + " entries, expected " +
                     std::to_string(inst.y_star.size()));
  }
  const std::size_t n = k.n;
  switch (k.family) {
    case TaskFamily::kAddition:
    case TaskFamily::kCompletion:
    case TaskFamily::kInverse: {
      double s = 0;
      for (std::size_t j = 0; j < y_pred.size(); ++j) s += (y_pred[j] - inst.y_star[j]) * (y_pred[j] - inst.y_star[j]);
      return s / static_cast<double>(y_pred.size());
    }
    case TaskFamily::kSudoku: {
      const std::size_t b = k.board_size();
      const auto digits = decode_one_hot(y_pred, b);
      const auto givens = givens_from_x(inst.x, b);
      for (std::size_t c = 0; c < givens.size(); ++c) {
        if (givens[c] != 0 && givens[c] != digits[c]) return 0.0;
      }
      return sudoku_board_valid(digits, b) ? 1.0 : 0.0;
    }
    case TaskFamily::kConnectivity: {
      std::size_t hits = 0;
      for (std::size_t j = 0; j < y_pred.size(); ++j) hits += y_pred[j] == inst.y_star[j];
      return static_cast<double>(hits) / static_cast<double>(y_pred.size());
    }
    case TaskFamily::kShortestPath: {
      const auto adj = adjacency_from_x(inst.x, n);
      const int start = argmax_index(std::span<const double>(inst.x).subspan(n * n, n));
      const int goal = argmax_index(std::span<const double>(inst.x).subspan(n * n + n, n));
      const int move = argmax_index(y_pred.subspan(n, n));
      if (start == goal) return move == goal ? 1.0 : 0.0;
      const auto dist = floyd_warshall_distances(adj, n);
      const std::size_t s = static_cast<std::size_t>(start), m = static_cast<std::size_t>(move),
                        g = static_cast<std::size_t>(goal);
      if (!adj[s * n + m]) return 0.0;
      const int dm = dist[m * n + g], ds = dist[s * n + g];
      return dm >= 0 && (ds < 0 || dm < ds) ? 1.0 : 0.0;
    }
  }
  return 0.0;
}

double graph_exact_match(const ProblemInstance& inst, std::span<const double> y_pred) {
  if (y_pred.size() != inst.y_star.size()) throw ShapeError("graph_exact_match: size mismatch");
  return std::equal(y_pred.begin(), y_pred.end(), inst.y_star.begin()) ? 1.0 : 0.0;
}

double random_first_move_success(const ProblemInstance& inst) {
  const std::size_t n = inst.kind.n;
  const auto adj = adjacency_from_x(inst.x, n);
  const int start = argmax_index(std::span<const double>(inst.x).subspan(n * n, n));
  const int goal = argmax_index(std::span<const double>(inst.x).subspan(n * n + n, n));
  const auto dist = floyd_warshall_distances(adj, n);
  const auto s = static_cast<std::size_t>(start), g = static_cast<std::size_t>(goal);
  std::size_t neighbours = 0, good = 0;
  for (std::size_t v = 0; v < n; ++v) {
    if (!adj[s * n + v]) continue;
    ++neighbours;
    const int dv = dist[v * n + g];
    if (dv >= 0 && dv < dist[s * n + g]) ++good;
  }
  return neighbours == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(neighbours);
}

Tensor stack_x(std::span<const ProblemInstance> batch) {
  if (batch.empty()) throw ShapeError("stack_x: empty batch");
  const std::size_t w = batch[0].x.size();
  std::vector<double> data;
  data.reserve(batch.size() * w);
  for (const auto& inst : batch) {
    if (inst.x.size() != w) throw ShapeError("stack_x: ragged batch");
    data.insert(data.end(), inst.x.begin(), inst.x.end());
  }
  return Tensor::constant({batch.size(), w}, std::move(data));
}

Tensor stack_y(std::span<const ProblemInstance> batch) {
  if (batch.empty()) throw ShapeError("stack_y: empty batch");
  const std::size_t w = batch[0].y_star.size();
  std::vector<double> data;
  data.reserve(batch.size() * w);
  for (const auto& inst : batch) {
    if (inst.y_star.size() != w) throw ShapeError("stack_y: ragged batch");
    data.insert(data.end(), inst.y_star.begin(), inst.y_star.end());
  }
  return Tensor::constant({batch.size(), w}, std::move(data));
}

}  // namespace ired

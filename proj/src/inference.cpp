#include "ired/inference.hpp"

#include <algorithm>
#include <cmath>

namespace ired {

namespace {

std::vector<double> row_of(const Tensor& t, std::size_t row) {
  const std::size_t w = t.dim(1);
  const auto d = t.data();
  return {d.begin() + static_cast<std::ptrdiff_t>(row * w), d.begin() + static_cast<std::ptrdiff_t>((row + 1) * w)};
}

Tensor as_batch(const Tensor& t) { return t.rank() == 1 ? reshape(t, {1, t.size()}) : t; }

}  // namespace

double SolveConfig::step_size(const NoiseSchedule& schedule, int k) const {
  if (!step_sizes.empty()) return step_sizes.at(static_cast<std::size_t>(k));
  // Level 0 has sigma = 0; a polish pass borrows the level-1 step.
  const double s = schedule.sigma(std::max(k, 1));
  return step_scale * s * s;
}

void SolveConfig::validate(const NoiseSchedule& schedule) const {
  if (steps < 0) throw std::invalid_argument("solve config: steps must be >= 0");
  if (!step_sizes.empty() && step_sizes.size() != static_cast<std::size_t>(schedule.levels()) + 1) {
    throw std::invalid_argument("solve config: step_sizes needs " + std::to_string(schedule.levels() + 1) +
                                " entries, got " + std::to_string(step_sizes.size()));
  }
  for (int k = 1; k <= schedule.levels(); ++k) {
    if (!(step_size(schedule, k) > 0)) {
      throw std::invalid_argument("solve config: step size at level " + std::to_string(k) + " must be > 0");
    }
  }
}

std::vector<double> SolveTrace::held_energies(std::size_t landscape) const {
  std::vector<double> out;
  for (const auto& s : landscapes.at(landscape).steps) out.push_back(s.accepted ? s.energy_after : s.energy_before);
  return out;
}

nlohmann::json SolveTrace::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& l : landscapes) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : l.steps) {
      steps.push_back({{"step", s.step},
                       {"energy_before", s.energy_before},
                       {"energy_after", s.energy_after},
                       {"accepted", s.accepted}});
    }
    out.push_back({{"level", l.level}, {"steps", steps}, {"y_final", l.y_final}});
  }
  return {{"landscapes", out}};
}

Tensor optimize_landscape(const EnergyModel& m, const Tensor& x, const Tensor& y0, int k, int steps, double lambda,
                          bool acceptance_check, std::vector<SolveTrace>* traces) {
  if (steps < 0) throw std::invalid_argument("optimize_landscape: steps must be >= 0");
  const Tensor xb = as_batch(x);
  Tensor y = as_batch(y0).detach();
  const std::size_t rows = y.dim(0), width = y.dim(1);
  const std::vector<int> levels(rows, k);
  if (traces) {
    if (traces->size() != rows) traces->resize(rows);
    for (auto& t : *traces) t.landscapes.push_back({k, {}, {}});
  }

  for (int t = 0; t < steps; ++t) {
    const Tensor leaf = Tensor::variable(y.shape(), y.to_vector());
    const Tensor energy = m.energies(xb, leaf, levels);
    const Tensor g = grad(sum(energy), leaf, false);
    NoGradGuard guard;
    const Tensor proposal = sub(y, scale(g, lambda));
    const Tensor proposed_energy = m.energies(xb, proposal, levels);

    std::vector<double> next = y.to_vector();
    const auto prop = proposal.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double before = energy.at(r), after = proposed_energy.at(r);
      if (!std::isfinite(before) || !std::isfinite(after)) {
        throw SolveError("optimize_landscape: non-finite energy at level " + std::to_string(k) + ", step " +
                             std::to_string(t) + ", row " + std::to_string(r),
                         traces ? *traces : std::vector<SolveTrace>{});
      }
      const bool accept = !acceptance_check || after < before;
      if (accept) std::copy_n(prop.begin() + static_cast<std::ptrdiff_t>(r * width), width, next.begin() + static_cast<std::ptrdiff_t>(r * width));
      if (traces) (*traces)[r].landscapes.back().steps.push_back({t, before, after, accept});
    }
    y = Tensor::constant(y.shape(), std::move(next));
  }
  if (traces) {
    for (std::size_t r = 0; r < rows; ++r) (*traces)[r].landscapes.back().y_final = row_of(y, r);
  }
  return y0.rank() == 1 ? reshape(y, y0.shape()) : y;
}

Tensor noisy_reverse_step(const EnergyModel& m, const Tensor& x, const Tensor& y, int k,
                          const NoiseSchedule& schedule, std::span<Rng> rows) {
  if (k < 1 || k > schedule.levels()) {
    throw std::out_of_range("noisy_reverse_step: level " + std::to_string(k) + " outside 1.." +
                            std::to_string(schedule.levels()));
  }
  const Tensor yb = as_batch(y).detach();
  const std::size_t batch = yb.dim(0), width = yb.dim(1);
  if (rows.size() != batch) throw ShapeError("noisy_reverse_step: need one rng per row");
  const std::vector<int> levels(batch, k);
  const Tensor eps_hat = gradient_y(m, as_batch(x), yb, levels, false);

  const double ab = schedule.alpha_bar(k), ab_prev = schedule.alpha_bar(k - 1);
  const double alpha = ab / ab_prev, beta = 1.0 - alpha;
  const double root_ab = std::sqrt(std::max(ab, NoiseSchedule::kRescaleFloor));
  const double c_clean = std::sqrt(ab_prev) * beta / (1.0 - ab);
  const double c_current = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab);
  const double stddev = k == 1 ? 0.0 : std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
  const double sigma = schedule.sigma(k);

  std::vector<double> out(batch * width);
  const auto yd = yb.data(), ed = eps_hat.data();
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t i = r * width + j;
      const double clean = (yd[i] - sigma * ed[i]) / root_ab;
      out[i] = c_clean * clean + c_current * yd[i];
      if (stddev > 0) out[i] += stddev * rows[r].normal();
    }
  }
  Tensor result = Tensor::constant(yb.shape(), std::move(out));
  return y.rank() == 1 ? reshape(result, y.shape()) : result;
}

Tensor noisy_reverse_step(const EnergyModel& m, const Tensor& x, const Tensor& y, int k,
                          const NoiseSchedule& schedule, Rng& rng) {
  const std::size_t batch = as_batch(y).dim(0);
  if (batch == 1) return noisy_reverse_step(m, x, y, k, schedule, std::span<Rng>(&rng, 1));
  // Independent per-row streams forked from the caller's stream.
  std::vector<Rng> rows;
  rows.reserve(batch);
  const std::uint64_t base = rng.engine()();
  for (std::size_t r = 0; r < batch; ++r) rows.emplace_back(base, std::initializer_list<std::uint64_t>{r});
  return noisy_reverse_step(m, x, y, k, schedule, std::span<Rng>(rows));
}

Tensor anneal_solve(const EnergyModel& m, const Tensor& x, std::size_t y_dim, const NoiseSchedule& schedule,
                    const SolveConfig& config, std::size_t first_instance, std::vector<SolveTrace>* traces) {
  config.validate(schedule);
  const Tensor xb = as_batch(x);
  const std::size_t batch = xb.dim(0);
  const int top = schedule.levels() - 1;

  std::vector<double> init;
  init.reserve(batch * y_dim);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto v = Rng(config.seed, {first_instance + r}).normal_vector(y_dim);
    init.insert(init.end(), v.begin(), v.end());
  }
  Tensor y = Tensor::constant({batch, y_dim}, std::move(init));
  if (traces) traces->assign(batch, SolveTrace{});

  if (config.noisy_mode) {
    std::vector<Rng> rows;
    rows.reserve(batch);
    for (std::size_t r = 0; r < batch; ++r) rows.emplace_back(config.seed, std::initializer_list<std::uint64_t>{first_instance + r, 1});
    for (int k = top; k >= 1; --k) {
      y = noisy_reverse_step(m, xb, y, k, schedule, std::span<Rng>(rows));
      if (traces) {
        for (std::size_t r = 0; r < batch; ++r) (*traces)[r].landscapes.push_back({k, {}, row_of(y, r)});
      }
    }
    return y;
  }

  for (int k = top; k >= 1; --k) {
    y = optimize_landscape(m, xb, y, k, config.steps, config.step_size(schedule, k), config.acceptance_check, traces);
    y = schedule.rescale_between(y, k, k - 1);
  }
  if (config.polish) {
    y = optimize_landscape(m, xb, y, 0, config.steps, config.step_size(schedule, 0), config.acceptance_check, traces);
  }
  return y;
}

Tensor discretize(const Tensor& y, const TaskKind& task) {
  return Tensor::constant(y.shape(), discretize(y.data(), task));
}

std::vector<double> discretize(std::span<const double> y, const TaskKind& task) {
  const OutputLayout layout = task.layout();
  std::vector<double> out(y.begin(), y.end());
  switch (layout.kind) {
    case OutputLayout::Kind::kContinuous:
      break;
    case OutputLayout::Kind::kBinary:
      for (double& v : out) v = v >= 0.5 ? 1.0 : 0.0;
      break;
    case OutputLayout::Kind::kOneHot: {
      const std::size_t g = layout.group;
      if (out.size() % g != 0) throw ShapeError("discretize: width " + std::to_string(out.size()) +
                                                " is not a multiple of group " + std::to_string(g));
      for (std::size_t start = 0; start < out.size(); start += g) {
        const auto first = y.begin() + static_cast<std::ptrdiff_t>(start);
        const auto best = static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(g)) - first);
        for (std::size_t j = 0; j < g; ++j) out[start + j] = j == best ? 1.0 : 0.0;
      }
      break;
    }
  }
  return out;
}

}  // namespace ired

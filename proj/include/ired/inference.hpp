#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ired/energy.hpp"
#include "ired/rng.hpp"
#include "ired/schedule.hpp"
#include "ired/tasks.hpp"

#include "json.hpp"

namespace ired {

struct SolveConfig {
  int steps = 10;  // T, gradient steps per landscape
  // lambda_k = step_scale * sigma_k^2 unless step_sizes (indexed 0..K) is set.
  double step_scale = 1.0;
  std::vector<double> step_sizes;
  bool acceptance_check = true;
  bool noisy_mode = false;  // ancestral reverse diffusion instead of descent
  bool polish = false;      // extra T steps at level 0
  std::uint64_t seed = 0;

  double step_size(const NoiseSchedule& schedule, int k) const;
  void validate(const NoiseSchedule& schedule) const;
};

struct StepRecord {
  int step = 0;
  double energy_before = 0;
  double energy_after = 0;  // energy of the proposal
  bool accepted = false;
};

struct LandscapeTrace {
  int level = 0;
  std::vector<StepRecord> steps;
  std::vector<double> y_final;
};

// One solve of one instance.
struct SolveTrace {
  std::vector<LandscapeTrace> landscapes;

  // Energies held after every step (the running minimum under acceptance).
  std::vector<double> held_energies(std::size_t landscape) const;
  nlohmann::json to_json() const;
};

class SolveError : public std::runtime_error {
 public:
  SolveError(const std::string& what, std::vector<SolveTrace> traces)
      : std::runtime_error(what), traces_(std::move(traces)) {}
  const std::vector<SolveTrace>& traces() const { return traces_; }

 private:
  std::vector<SolveTrace> traces_;
};

// T steps of y' = y - lambda * dE/dy at level k for every row of y. With the
// acceptance check a row keeps y whenever E(y') >= E(y). traces, when given,
// holds one entry per row and receives a new landscape each call.
Tensor optimize_landscape(const EnergyModel& m, const Tensor& x, const Tensor& y0, int k, int steps, double lambda,
                          bool acceptance_check, std::vector<SolveTrace>* traces = nullptr);

// Annealed solve from y ~ N(0, 1): for k = K-1 down to 1 optimise the
// level-k landscape, then rescale into level k-1. Row i draws its start from
// Rng(seed, {first_instance + i}), so results do not depend on batching.
// In noisy mode each level applies one noisy_reverse_step instead.
Tensor anneal_solve(const EnergyModel& m, const Tensor& x, std::size_t y_dim, const NoiseSchedule& schedule,
                    const SolveConfig& config, std::size_t first_instance = 0,
                    std::vector<SolveTrace>* traces = nullptr);

// One ancestral step from level k to k-1 with the energy gradient as the noise
// prediction eps_hat:
//   y0_hat = (y - sigma_k eps_hat) / sqrt(max(abar_k, floor))
//   mean   = sqrt(abar_{k-1}) beta_k / (1 - abar_k) * y0_hat
//          + sqrt(alpha_k) (1 - abar_{k-1}) / (1 - abar_k) * y
//   var    = beta_k (1 - abar_{k-1}) / (1 - abar_k)
// with alpha_k = abar_k / abar_{k-1}, beta_k = 1 - alpha_k. No noise at k = 1.
// rows holds one stream per row of y.
Tensor noisy_reverse_step(const EnergyModel& m, const Tensor& x, const Tensor& y, int k,
                          const NoiseSchedule& schedule, std::span<Rng> rows);
Tensor noisy_reverse_step(const EnergyModel& m, const Tensor& x, const Tensor& y, int k,
                          const NoiseSchedule& schedule, Rng& rng);

// One-hot groups become argmax one-hot (lowest index on ties), binary entries
// are thresholded at 0.5 (0.5 maps to 1). Continuous tasks pass through.
Tensor discretize(const Tensor& y, const TaskKind& task);
std::vector<double> discretize(std::span<const double> y, const TaskKind& task);

}  // namespace ired

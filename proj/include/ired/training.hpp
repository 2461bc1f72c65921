#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ired/energy.hpp"
#include "ired/rng.hpp"
#include "ired/schedule.hpp"
#include "ired/tasks.hpp"

namespace ired {

struct NegativeConfig {
  double resample_fraction = 0.2;  // discrete: share of groups moved
  double label_noise = 0.3;        // continuous: stddev of the start perturbation
  int descent_steps = 2;           // continuous: acceptance-free steps
  double step_scale = 1.0;         // lambda_k = step_scale * sigma_k^2
  bool descent_for_discrete = false;
};

struct TrainConfig {
  std::size_t batch = 64;
  double learning_rate = 1e-3;
  std::size_t iterations = 1000;
  double contrastive_weight = 1.0;
  NegativeConfig negative;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  void validate() const;
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::uint64_t step = 0;

  static AdamState for_model(const EnergyModel& m);
  // params[i] -= lr * mhat / (sqrt(vhat) + eps)
  void apply(std::vector<NamedTensor>& params, std::span<const Tensor> grads, double learning_rate);
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::uint64_t iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  std::uint64_t iteration() const { return iteration_; }

 private:
  std::uint64_t iteration_;
};

// Per-row landscape levels and noise shared by the denoising and contrastive terms.
struct NoiseDraw {
  std::vector<int> levels;
  Tensor eps;
};

// k ~ U{1..K} and eps ~ N(0, I) per row.
NoiseDraw sample_noise(std::size_t rows, std::size_t width, const NoiseSchedule& schedule, Rng& rng);

struct DenoisingTerms {
  Tensor loss;             // mean over rows of ||dE/dy(x, y_noisy, k) - eps||^2
  Tensor positive_energy;  // E(x, y_noisy, k), [B, 1]
};

DenoisingTerms denoising_terms(const EnergyModel& m, const Tensor& x, const Tensor& y_star,
                               const NoiseSchedule& schedule, const NoiseDraw& noise);
Tensor denoising_loss(const EnergyModel& m, const Tensor& x, const Tensor& y_star, const NoiseSchedule& schedule,
                      Rng& rng);

// Continuous tasks: y* + N(0, label_noise^2) followed by descent_steps plain
// gradient steps on the level-k landscape. Discrete tasks: round(fraction *
// groups) distinct groups per row moved to a different category (binary
// entries flipped). Returned tensor carries no gradient record.
Tensor make_negative(const Tensor& y_star, const TaskKind& task, const EnergyModel& m, const Tensor& x,
                     std::span<const int> levels, const NoiseSchedule& schedule, const NegativeConfig& config,
                     Rng& rng);

// mean over rows of softplus(E+ - E-) with both labels corrupted by the same eps.
Tensor contrastive_loss(const EnergyModel& m, const Tensor& x, const Tensor& y_star, const Tensor& y_neg,
                        const NoiseSchedule& schedule, const NoiseDraw& noise);
// Same, with E+ already computed at the corrupted positive.
Tensor contrastive_loss_from(const EnergyModel& m, const Tensor& x, const Tensor& positive_energy, const Tensor& y_neg,
                             const NoiseSchedule& schedule, const NoiseDraw& noise);

struct StepLosses {
  double mse = 0;
  double contrast = 0;
};

// One optimisation step on a batch. Draws levels/noise first and negatives
// second from rng. Returns the losses before the update.
StepLosses train_step(EnergyModel& m, AdamState& adam, const Tensor& x, const Tensor& y_star, const TaskKind& task,
                      const TrainConfig& config, const NoiseSchedule& schedule, Rng& rng, std::uint64_t iteration = 0);

struct LossRecord {
  std::uint64_t iteration = 0;
  double mse = 0;
  double contrast = 0;
};

// Called after iteration `done` completes (1-based count of finished steps).
using CheckpointHook = std::function<void(std::uint64_t done, const EnergyModel&, const AdamState&)>;

// Runs iterations [start, config.iterations). Iteration i samples its batch,
// noise and negatives from Rng(seed, {i}), so a resumed run replays the same
// stream as an uninterrupted one.
std::vector<LossRecord> train(EnergyModel& m, AdamState& adam, std::span<const ProblemInstance> dataset,
                              const TrainConfig& config, const NoiseSchedule& schedule, std::uint64_t start = 0,
                              const CheckpointHook& hook = {});

}  // namespace ired

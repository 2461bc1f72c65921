#include "ired/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ired {

namespace {

std::vector<Tensor> leaves(const EnergyModel& m) {
  std::vector<Tensor> out;
  out.reserve(m.parameters().size());
  for (const auto& p : m.parameters()) out.push_back(p.value);
  return out;
}

void resample_groups(std::span<double> row, const OutputLayout& layout, double fraction, Rng& rng) {
  const bool binary = layout.kind == OutputLayout::Kind::kBinary;
  const std::size_t g = binary ? 1 : layout.group;
  const std::size_t groups = row.size() / g;
  const auto count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(groups)));
  std::vector<std::size_t> order(groups);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  for (std::size_t c = 0; c < std::min(count, groups); ++c) {
    const std::size_t start = order[c] * g;
    if (binary) {
      row[start] = row[start] > 0.5 ? 0.0 : 1.0;
      continue;
    }
    const auto first = row.begin() + static_cast<std::ptrdiff_t>(start);
    const auto current = static_cast<std::int64_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(g)) - first);
    std::int64_t next = rng.uniform_int(0, static_cast<std::int64_t>(g) - 2);
    if (next >= current) ++next;
    for (std::size_t j = 0; j < g; ++j) row[start + j] = static_cast<std::int64_t>(j) == next ? 1.0 : 0.0;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
  if (!(learning_rate >= 0)) throw std::invalid_argument("train config: learning_rate must be >= 0");
  if (!(contrastive_weight >= 0)) throw std::invalid_argument("train config: contrastive_weight must be >= 0");
  if (negative.resample_fraction < 0 || negative.resample_fraction > 1) {
    throw std::invalid_argument("train config: negative.resample_fraction must be in [0, 1]");
  }
  if (negative.descent_steps < 0) throw std::invalid_argument("train config: negative.descent_steps must be >= 0");
}

AdamState AdamState::for_model(const EnergyModel& m) {
  AdamState s;
  for (const auto& p : m.parameters()) {
    s.first.emplace_back(p.value.size(), 0.0);
    s.second.emplace_back(p.value.size(), 0.0);
  }
  return s;
}

void AdamState::apply(std::vector<NamedTensor>& params, std::span<const Tensor> grads, double learning_rate) {
  if (params.size() != first.size() || grads.size() != params.size()) {
    throw std::invalid_argument("adam: state does not match the parameter list");
  }
  ++step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.mutable_data();
    const auto g = grads[i].data();
    auto& m = first[i];
    auto& v = second[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1 - kBeta2) * g[j] * g[j];
      w[j] -= learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEpsilon);
    }
  }
}

NoiseDraw sample_noise(std::size_t rows, std::size_t width, const NoiseSchedule& schedule, Rng& rng) {
  NoiseDraw d;
  d.levels.resize(rows);
  std::vector<double> eps(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    d.levels[r] = static_cast<int>(rng.uniform_int(1, schedule.levels()));
    for (std::size_t j = 0; j < width; ++j) eps[r * width + j] = rng.normal();
  }
  d.eps = Tensor::constant({rows, width}, std::move(eps));
  return d;
}

DenoisingTerms denoising_terms(const EnergyModel& m, const Tensor& x, const Tensor& y_star,
                               const NoiseSchedule& schedule, const NoiseDraw& noise) {
  if (y_star.rank() != 2 || noise.eps.shape() != y_star.shape() || noise.levels.size() != y_star.dim(0)) {
    throw ShapeError("denoising_loss: labels " + shape_str(y_star.shape()) + " vs noise " +
                     shape_str(noise.eps.shape()));
  }
  Tensor noisy;
  {
    NoGradGuard guard;
    noisy = schedule.corrupt_rows(y_star, noise.levels, noise.eps);
  }
  const Tensor leaf = Tensor::variable(noisy.shape(), noisy.to_vector());
  const Tensor energy = m.energies(x, leaf, noise.levels);
  const Tensor score = grad(sum(energy), leaf, true);
  const double inv_rows = 1.0 / static_cast<double>(y_star.dim(0));
  return {scale(sum(square(sub(score, noise.eps))), inv_rows), energy};
}

Tensor denoising_loss(const EnergyModel& m, const Tensor& x, const Tensor& y_star, const NoiseSchedule& schedule,
                      Rng& rng) {
  const NoiseDraw noise = sample_noise(y_star.dim(0), y_star.dim(1), schedule, rng);
  return denoising_terms(m, x, y_star, schedule, noise).loss;
}

Tensor make_negative(const Tensor& y_star, const TaskKind& task, const EnergyModel& m, const Tensor& x,
                     std::span<const int> levels, const NoiseSchedule& schedule, const NegativeConfig& config,
                     Rng& rng) {
  const std::size_t rows = y_star.dim(0), width = y_star.dim(1);
  std::vector<double> y = y_star.to_vector();
  if (!task.continuous() && !config.descent_for_discrete) {
    const OutputLayout layout = task.layout();
    for (std::size_t r = 0; r < rows; ++r) {
      resample_groups(std::span<double>(y).subspan(r * width, width), layout, config.resample_fraction, rng);
    }
    return Tensor::constant(y_star.shape(), std::move(y));
  }

  for (double& v : y) v += config.label_noise * rng.normal();
  for (int s = 0; s < config.descent_steps; ++s) {
    const Tensor g = gradient_y(m, x, Tensor::constant(y_star.shape(), y), levels, false);
    const auto gd = g.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double sigma = schedule.sigma(levels[r]);
      const double lambda = config.step_scale * sigma * sigma;
      for (std::size_t j = 0; j < width; ++j) y[r * width + j] -= lambda * gd[r * width + j];
    }
  }
  return Tensor::constant(y_star.shape(), std::move(y));
}

Tensor contrastive_loss_from(const EnergyModel& m, const Tensor& x, const Tensor& positive_energy, const Tensor& y_neg,
                             const NoiseSchedule& schedule, const NoiseDraw& noise) {
  if (noise.eps.shape() != y_neg.shape()) {
    throw ShapeError("contrastive_loss: negatives " + shape_str(y_neg.shape()) + " vs noise " +
                     shape_str(noise.eps.shape()));
  }
  Tensor noisy;
  {
    NoGradGuard guard;
    noisy = schedule.corrupt_rows(y_neg, noise.levels, noise.eps);
  }
  const Tensor negative_energy = m.energies(x, noisy, noise.levels);
  return mean(softplus(sub(positive_energy, negative_energy)));
}

Tensor contrastive_loss(const EnergyModel& m, const Tensor& x, const Tensor& y_star, const Tensor& y_neg,
                        const NoiseSchedule& schedule, const NoiseDraw& noise) {
  if (y_star.shape() != y_neg.shape()) {
    throw ShapeError("contrastive_loss: " + shape_str(y_star.shape()) + " vs " + shape_str(y_neg.shape()));
  }
  Tensor noisy;
  {
    NoGradGuard guard;
    noisy = schedule.corrupt_rows(y_star, noise.levels, noise.eps);
  }
  return contrastive_loss_from(m, x, m.energies(x, noisy, noise.levels), y_neg, schedule, noise);
}

StepLosses train_step(EnergyModel& m, AdamState& adam, const Tensor& x, const Tensor& y_star, const TaskKind& task,
                      const TrainConfig& config, const NoiseSchedule& schedule, Rng& rng, std::uint64_t iteration) {
  const NoiseDraw noise = sample_noise(y_star.dim(0), y_star.dim(1), schedule, rng);
  const DenoisingTerms terms = denoising_terms(m, x, y_star, schedule, noise);
  const Tensor negatives = make_negative(y_star, task, m, x, noise.levels, schedule, config.negative, rng);

  Tensor total = terms.loss;
  StepLosses losses{terms.loss.item(), 0.0};
  if (config.contrastive_weight > 0) {
    const Tensor contrast = contrastive_loss_from(m, x, terms.positive_energy, negatives, schedule, noise);
    losses.contrast = contrast.item();
    total = add(total, scale(contrast, config.contrastive_weight));
  } else {
    NoGradGuard guard;
    losses.contrast = contrastive_loss_from(m, x, terms.positive_energy, negatives, schedule, noise).item();
  }
  if (!std::isfinite(losses.mse) || !std::isfinite(losses.contrast)) {
    throw DivergenceError("training diverged at iteration " + std::to_string(iteration) + ": loss_mse=" +
                              std::to_string(losses.mse) + " loss_contrast=" + std::to_string(losses.contrast),
                          iteration);
  }
  const auto params = leaves(m);
  const auto grads = grad(total, params, false);
  adam.apply(m.parameters(), grads, config.learning_rate);
  return losses;
}

std::vector<LossRecord> train(EnergyModel& m, AdamState& adam, std::span<const ProblemInstance> dataset,
                              const TrainConfig& config, const NoiseSchedule& schedule, std::uint64_t start,
                              const CheckpointHook& hook) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  const TaskKind task = dataset.front().kind;
  std::vector<LossRecord> history;
  history.reserve(config.iterations > start ? config.iterations - start : 0);
  std::vector<ProblemInstance> batch(config.batch);
  for (std::uint64_t it = start; it < config.iterations; ++it) {
    Rng rng(config.seed, {it});
    for (auto& slot : batch) {
      slot = dataset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))];
    }
    const StepLosses l = train_step(m, adam, stack_x(batch), stack_y(batch), task, config, schedule, rng, it);
    history.push_back({it, l.mse, l.contrast});
    const std::uint64_t done = it + 1;
    if (hook && config.checkpoint_every > 0 && done % config.checkpoint_every == 0) hook(done, m, adam);
  }
  return history;
}

}  // namespace ired

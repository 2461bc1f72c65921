#pragma once

#include <cstddef>
#include <vector>

#include "ired/tensor.hpp"

namespace ired {

// Annealing ladder over levels 0..K. Level 0 is clean data, level K pure noise.
// alpha_bar[k] is the squared retention of the clean signal at level k and
// sigma[k] = sqrt(1 - alpha_bar[k]) the noise scale.
class NoiseSchedule {
 public:
  // Floor applied to alpha_bar when it appears in a denominator.
  static constexpr double kRescaleFloor = 1e-8;

  // Cosine ladder f(k) = cos^2(((k/K + s)/(1 + s)) * pi/2), s = 0.008,
  // alpha_bar[k] = f(k)/f(0) with alpha_bar[0] = 1 and alpha_bar[K] = 0 pinned.
  static NoiseSchedule cosine(int levels);
  // Rebuilds a schedule from stored values (checkpoints). Validates invariants.
  static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);

  int levels() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  double alpha_bar(int k) const;
  double sigma(int k) const;
  double retention(int k) const;  // sqrt(alpha_bar[k])
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }
  const std::vector<double>& sigmas() const { return sigma_; }

  // sqrt(alpha_bar[k]) * y + sigma[k] * eps
  Tensor corrupt(const Tensor& y, int k, const Tensor& eps) const;
  // Same, with one level per row of rank-2 y/eps.
  Tensor corrupt_rows(const Tensor& y, const std::vector<int>& levels, const Tensor& eps) const;
  // Moves a candidate from level from_k to the cleaner level to_k = from_k - 1.
  Tensor rescale_between(const Tensor& y, int from_k, int to_k) const;
  double rescale_factor(int from_k, int to_k) const;

 private:
  explicit NoiseSchedule(std::vector<double> alpha_bar);
  void check_level(int k) const;

  std::vector<double> alpha_bar_;
  std::vector<double> sigma_;
};

}  // namespace ired

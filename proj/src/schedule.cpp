#include "ired/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ired {

namespace {
constexpr double kCosineOffset = 0.008;

double cosine_f(double t) {
  const double c = std::cos((t + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0);
  return c * c;
}
}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
  sigma_.reserve(alpha_bar_.size());
  for (double ab : alpha_bar_) sigma_.push_back(std::sqrt(1.0 - ab));
}

NoiseSchedule NoiseSchedule::cosine(int levels) {
  if (levels < 1) {
    throw std::invalid_argument("cosine schedule: need at least one level, got " + std::to_string(levels));
  }
  std::vector<double> ab(static_cast<std::size_t>(levels) + 1);
  const double f0 = cosine_f(0.0);
  for (int k = 0; k <= levels; ++k) {
    ab[static_cast<std::size_t>(k)] = cosine_f(static_cast<double>(k) / levels) / f0;
  }
  ab.front() = 1.0;
  ab.back() = 0.0;
  return NoiseSchedule(std::move(ab));
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar) {
  if (alpha_bar.size() < 2) {
    throw std::invalid_argument("schedule: need alpha_bar for at least levels 0 and 1");
  }
  if (alpha_bar.front() != 1.0 || alpha_bar.back() != 0.0) {
    throw std::invalid_argument("schedule: alpha_bar must start at 1 and end at 0");
  }
  for (std::size_t k = 1; k < alpha_bar.size(); ++k) {
    if (!(alpha_bar[k] < alpha_bar[k - 1])) {
      throw std::invalid_argument("schedule: alpha_bar must be strictly decreasing");
    }
  }
  return NoiseSchedule(std::move(alpha_bar));
}

void NoiseSchedule::check_level(int k) const {
  if (k < 0 || k > levels()) {
    throw std::out_of_range("schedule: level " + std::to_string(k) + " outside 0.." + std::to_string(levels()));
  }
}

double NoiseSchedule::alpha_bar(int k) const {
  check_level(k);
  return alpha_bar_[static_cast<std::size_t>(k)];
}

double NoiseSchedule::sigma(int k) const {
  check_level(k);
  return sigma_[static_cast<std::size_t>(k)];
}

double NoiseSchedule::retention(int k) const { return std::sqrt(alpha_bar(k)); }

Tensor NoiseSchedule::corrupt(const Tensor& y, int k, const Tensor& eps) const {
  check_level(k);
  if (y.shape() != eps.shape()) {
    throw ShapeError("corrupt: label " + shape_str(y.shape()) + " vs noise " + shape_str(eps.shape()));
  }
  return add(scale(y, retention(k)), scale(eps, sigma(k)));
}

Tensor NoiseSchedule::corrupt_rows(const Tensor& y, const std::vector<int>& levels, const Tensor& eps) const {
  if (y.shape() != eps.shape() || y.rank() != 2 || y.dim(0) != levels.size()) {
    throw ShapeError("corrupt_rows: label " + shape_str(y.shape()) + ", noise " + shape_str(eps.shape()) + ", " +
                     std::to_string(levels.size()) + " levels");
  }
  const std::size_t rows = y.dim(0), cols = y.dim(1);
  std::vector<double> a(rows * cols), s(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double ra = retention(levels[i]);
    const double sg = sigma(levels[i]);
    for (std::size_t j = 0; j < cols; ++j) {
      a[i * cols + j] = ra;
      s[i * cols + j] = sg;
    }
  }
  return add(mul(y, Tensor::constant(y.shape(), std::move(a))), mul(eps, Tensor::constant(y.shape(), std::move(s))));
}

double NoiseSchedule::rescale_factor(int from_k, int to_k) const {
  check_level(from_k);
  check_level(to_k);
  if (to_k != from_k - 1) {
    throw std::invalid_argument("rescale_between: expected to_k = from_k - 1, got " + std::to_string(from_k) +
                                " -> " + std::to_string(to_k));
  }
  const double from = std::max(alpha_bar(from_k), kRescaleFloor);
  return std::sqrt(alpha_bar(to_k) / from);
}

Tensor NoiseSchedule::rescale_between(const Tensor& y, int from_k, int to_k) const {
  return scale(y, rescale_factor(from_k, to_k));
}

}  // namespace ired

#include "ired/energy.hpp"

#include <cmath>
#include <stdexcept>

namespace ired {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::kMlpEnergy:
      return "mlp_energy";
    case Architecture::kBoardEnergy:
      return "board_energy";
    case Architecture::kEdgeRelationalEnergy:
      return "edge_relational_energy";
    case Architecture::kPlanRelationalEnergy:
      return "plan_relational_energy";
  }
  return "unknown";
}

Architecture architecture_from_string(const std::string& name) {
  for (Architecture a : {Architecture::kMlpEnergy, Architecture::kBoardEnergy, Architecture::kEdgeRelationalEnergy,
                         Architecture::kPlanRelationalEnergy}) {
    if (to_string(a) == name) return a;
  }
  throw std::invalid_argument("unknown architecture '" + name + "'");
}

std::size_t EnergyModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<NamedTensor> EnergyModel::copy_parameters() const {
  std::vector<NamedTensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) {
    out.push_back({p.name, Tensor::variable(p.value.shape(), p.value.to_vector())});
  }
  return out;
}

const Tensor& NetworkEnergy::param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

void NetworkEnergy::check_inputs(const Tensor& x, const Tensor& y, std::span<const int> levels) const {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(0) != y.dim(0) || levels.size() != x.dim(0)) {
    throw ShapeError(to_string(spec_.arch) + ": inputs x " + shape_str(x.shape()) + ", y " + shape_str(y.shape()) +
                     " with " + std::to_string(levels.size()) + " levels");
  }
  for (int k : levels) {
    if (k < 0 || k > spec_.levels) {
      throw std::out_of_range(to_string(spec_.arch) + ": level " + std::to_string(k) + " outside 0.." +
                              std::to_string(spec_.levels));
    }
  }
}

std::size_t mlp_parameter_count(const ModelSpec& s) {
  const std::size_t w = s.width;
  return (s.x_dim + s.y_dim) * w + w + (s.depth - 1) * (w * w + w) + w + 1 +
         static_cast<std::size_t>(s.levels + 1) * w;
}

Tensor eval(const EnergyModel& m, const Tensor& x, const Tensor& y, int level) {
  const Tensor xr = x.rank() == 1 ? reshape(x, {1, x.size()}) : x;
  const Tensor yr = y.rank() == 1 ? reshape(y, {1, y.size()}) : y;
  if (xr.dim(0) != 1 || yr.dim(0) != 1) {
    throw ShapeError("eval: expects a single instance, got x " + shape_str(x.shape()) + ", y " + shape_str(y.shape()));
  }
  const int levels[1] = {level};
  return reshape(m.energies(xr, yr, levels), {});
}

Tensor gradient_y(const EnergyModel& m, const Tensor& x, const Tensor& y, std::span<const int> levels,
                  bool create_graph) {
  const Tensor leaf = Tensor::variable(y.shape(), y.to_vector());
  return grad(sum(m.energies(x, leaf, levels)), leaf, create_graph);
}

Tensor gradient_y(const EnergyModel& m, const Tensor& x, const Tensor& y, int level, bool create_graph) {
  const std::vector<int> levels(y.rank() == 2 ? y.dim(0) : 1, level);
  if (y.rank() == 1) {
    const Tensor g = gradient_y(m, reshape(x, {1, x.size()}), reshape(y, {1, y.size()}), levels, create_graph);
    return reshape(g, y.shape());
  }
  return gradient_y(m, x, y, levels, create_graph);
}

// ---- QuadraticEnergy -------------------------------------------------------------

QuadraticEnergy::QuadraticEnergy(CenterFn center, NoiseSchedule schedule, bool level_scaled, Weighting weighting)
    : center_(std::move(center)), schedule_(std::move(schedule)), level_scaled_(level_scaled), weighting_(weighting) {}

QuadraticEnergy QuadraticEnergy::fixed(std::vector<double> center, NoiseSchedule schedule, bool level_scaled) {
  auto fn = [c = std::move(center)](const Tensor& x) {
    const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
    std::vector<double> data;
    data.reserve(rows * c.size());
    for (std::size_t i = 0; i < rows; ++i) data.insert(data.end(), c.begin(), c.end());
    return Tensor::constant({rows, c.size()}, std::move(data));
  };
  return QuadraticEnergy(std::move(fn), std::move(schedule), level_scaled, Weighting::kUnit);
}

Tensor QuadraticEnergy::energies(const Tensor& x, const Tensor& y, std::span<const int> levels) const {
  if (y.rank() != 2 || levels.size() != y.dim(0)) {
    throw ShapeError("quadratic: y " + shape_str(y.shape()) + " with " + std::to_string(levels.size()) + " levels");
  }
  const Tensor c = center_(x);
  if (c.shape() != y.shape()) {
    throw ShapeError("quadratic: center " + shape_str(c.shape()) + " vs y " + shape_str(y.shape()));
  }
  const std::size_t rows = y.dim(0), cols = y.dim(1);
  std::vector<double> shift(rows * cols), weight(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double s = level_scaled_ ? schedule_.retention(levels[i]) : 1.0;
    for (std::size_t j = 0; j < cols; ++j) shift[i * cols + j] = s * c.at(i * cols + j);
    weight[i] = weighting_ == Weighting::kScore ? 0.5 / std::max(schedule_.sigma(levels[i]), 1e-8) : 0.5;
  }
  const Tensor diff = sub(y, Tensor::constant(y.shape(), std::move(shift)));
  return mul(row_sum(square(diff)), Tensor::constant({rows, 1}, std::move(weight)));
}

}  // namespace ired

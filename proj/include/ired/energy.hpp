#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ired/schedule.hpp"
#include "ired/tensor.hpp"

namespace ired {

enum class Architecture {
  kMlpEnergy,             // x and y concatenated, MLP to a scalar
  kBoardEnergy,           // per-cell residual net with row/column/block pooling
  kEdgeRelationalEnergy,  // edge features composed through intermediate nodes
  kPlanRelationalEnergy,  // node features over time with adjacency messages
};

std::string to_string(Architecture arch);
Architecture architecture_from_string(const std::string& name);

struct ModelSpec {
  Architecture arch = Architecture::kMlpEnergy;
  std::size_t width = 128;
  // Hidden layers (mlp), residual blocks (board) or message rounds (relational).
  std::size_t depth = 3;
  std::size_t x_dim = 0;
  std::size_t y_dim = 0;
  int levels = 10;
  // Digits per row of a board (4 for 4x4 Sudoku). Board architecture only.
  std::size_t board_size = 4;

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// A scalar energy E(x, y, k) evaluated for a batch: x is [B, x_dim], y is
// [B, y_dim] and levels holds one landscape index per row. Returns [B, 1].
class EnergyModel {
 public:
  virtual ~EnergyModel() = default;
  virtual Tensor energies(const Tensor& x, const Tensor& y, std::span<const int> levels) const = 0;
  virtual std::unique_ptr<EnergyModel> clone() const = 0;
  virtual std::string architecture() const = 0;

  // Trainable leaves in a fixed order; empty for analytic energies.
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;

 protected:
  std::vector<NamedTensor> params_;
  // Deep copy of the parameter values into fresh leaves.
  std::vector<NamedTensor> copy_parameters() const;
};

// Network energy with a ModelSpec; the only kind that checkpoints.
class NetworkEnergy : public EnergyModel {
 public:
  const ModelSpec& spec() const { return spec_; }
  std::string architecture() const override { return to_string(spec_.arch); }
  const Tensor& param(const std::string& name) const;

 protected:
  explicit NetworkEnergy(ModelSpec spec) : spec_(std::move(spec)) {}
  void check_inputs(const Tensor& x, const Tensor& y, std::span<const int> levels) const;
  ModelSpec spec_;
};

enum class Init { kRandom, kZero };

// Initialisation: weights and biases U(-1/sqrt(fan_in), 1/sqrt(fan_in)); level
// and position embeddings use the bound of the layer they feed.
std::unique_ptr<NetworkEnergy> build(const ModelSpec& spec, std::uint64_t seed, Init init = Init::kRandom);

// E = 0.5 * ||o||^2 per instance, where o stacks rows_per_instance output rows
// for each instance of the batch. Shared head of the board and relational nets.
Tensor l2_head_energy(const Tensor& o, std::size_t batch, std::size_t rows_per_instance);

// Number of scalars in the mlp_energy network:
// (x+y)*w + w  +  (depth-1)*(w*w + w)  +  w + 1  +  (levels+1)*w.
std::size_t mlp_parameter_count(const ModelSpec& spec);

// Single-instance energy as a scalar tensor. x and y may be rank 1 or [1, n].
Tensor eval(const EnergyModel& m, const Tensor& x, const Tensor& y, int level);
// Batched d/dy of the energies; y is treated as a fresh leaf. With
// create_graph the result stays differentiable in the model parameters.
Tensor gradient_y(const EnergyModel& m, const Tensor& x, const Tensor& y, std::span<const int> levels,
                  bool create_graph = false);
Tensor gradient_y(const EnergyModel& m, const Tensor& x, const Tensor& y, int level, bool create_graph = false);

// E = 0.5 * w_k * ||y - s_k * c(x)||^2 per row, where c(x) is a constant target
// ([B, y_dim]) computed from x. s_k = sqrt(alpha_bar[k]) when level_scaled,
// else 1. w_k = 1/sigma_k under kScore (so the gradient at a corrupted target
// is exactly the injected noise), else 1. Used as an exact reference energy.
class QuadraticEnergy : public EnergyModel {
 public:
  using CenterFn = std::function<Tensor(const Tensor& x)>;
  enum class Weighting { kUnit, kScore };

  QuadraticEnergy(CenterFn center, NoiseSchedule schedule, bool level_scaled, Weighting weighting);
  // Fixed center broadcast to every row.
  static QuadraticEnergy fixed(std::vector<double> center, NoiseSchedule schedule, bool level_scaled);

  Tensor energies(const Tensor& x, const Tensor& y, std::span<const int> levels) const override;
  std::unique_ptr<EnergyModel> clone() const override { return std::make_unique<QuadraticEnergy>(*this); }
  std::string architecture() const override { return "quadratic"; }

 private:
  CenterFn center_;
  NoiseSchedule schedule_;
  bool level_scaled_;
  Weighting weighting_;
};

}  // namespace ired

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace stssl::nn {

/// Fully connected network with tanh hidden layers and a linear output
/// layer. Samples are rows: forward maps (n x in) to (n x out). All weights
/// and biases live in one flat vector so optimizers, EMA and checkpoints can
/// treat a network as a single tensor. Per layer the layout is W (in x out,
/// column-major) followed by b (out).
class Mlp {
 public:
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;   // input to each layer
    std::vector<Eigen::MatrixXd> outputs;  // activated output of each layer
  };

  Mlp() = default;
  explicit Mlp(std::vector<int> widths);

  const std::vector<int>& widths() const { return widths_; }
  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  std::size_t num_layers() const { return widths_.size() - 1; }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  /// Glorot-uniform weights, zero biases.
  void init(std::uint64_t seed);

  /// Throws NumericalError if any activation is non-finite.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const;

  /// Accumulates dLoss/dparams into `grad_params` (same layout as params())
  /// and returns dLoss/dinput.
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& grad_out,
                           Eigen::VectorXd& grad_params) const;

  bool same_shape(const Mlp& other) const { return widths_ == other.widths_; }

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + static_cast<std::size_t>(widths_[layer] * widths_[layer + 1]);
  }

  std::vector<int> widths_;
  std::vector<std::size_t> offsets_;
  Eigen::VectorXd params_;
};

}  // namespace stssl::nn

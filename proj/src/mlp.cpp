#include "stssl/mlp.hpp"

#include <cmath>

#include "stssl/error.hpp"
#include "stssl/rng.hpp"

namespace stssl::nn {

using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

Mlp::Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw InvalidArgument("an MLP needs at least input and output widths");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    if (widths_[l] <= 0 || widths_[l + 1] <= 0) throw InvalidArgument("MLP widths must be > 0");
    offsets_.push_back(total);
    total += static_cast<std::size_t>(widths_[l] * widths_[l + 1] + widths_[l + 1]);
  }
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
}

void Mlp::init(std::uint64_t seed) {
  Rng rng(seed);
  params_.setZero();
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const int in = widths_[l], out = widths_[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    double* w = params_.data() + weight_offset(l);
    for (int i = 0; i < in * out; ++i) w[i] = dist(rng);
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  if (x.cols() != in_dim()) {
    throw InvalidArgument("MLP input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(in_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const int in = widths_[l], out = widths_[l + 1];
    const ConstMatMap w(params_.data() + weight_offset(l), in, out);
    const ConstVecMap b(params_.data() + bias_offset(l), out);
    Eigen::MatrixXd z = h * w;
    z.rowwise() += b.transpose();
    if (l + 1 < num_layers()) z = z.array().tanh().matrix();
    if (cache) cache->inputs.push_back(std::move(h));
    h = std::move(z);
    if (cache) cache->outputs.push_back(h);
  }
  if (!h.allFinite()) throw NumericalError("non-finite activation in MLP forward pass");
  return h;
}

Eigen::MatrixXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& grad_out,
                              Eigen::VectorXd& grad_params) const {
  if (grad_params.size() != params_.size()) {
    throw InvalidArgument("gradient buffer does not match parameter count");
  }
  if (cache.inputs.size() != num_layers()) throw InvalidArgument("MLP cache is incomplete");
  Eigen::MatrixXd g = grad_out;
  for (std::size_t l = num_layers(); l-- > 0;) {
    const int in = widths_[l], out = widths_[l + 1];
    if (l + 1 < num_layers()) {
      // tanh'(z) = 1 - tanh(z)^2
      g.array() *= 1.0 - cache.outputs[l].array().square();
    }
    MatMap gw(grad_params.data() + weight_offset(l), in, out);
    VecMap gb(grad_params.data() + bias_offset(l), out);
    gw.noalias() += cache.inputs[l].transpose() * g;
    gb.noalias() += g.colwise().sum().transpose();
    const ConstMatMap w(params_.data() + weight_offset(l), in, out);
    Eigen::MatrixXd next = g * w.transpose();
    g = std::move(next);
  }
  return g;
}

}  // namespace stssl::nn

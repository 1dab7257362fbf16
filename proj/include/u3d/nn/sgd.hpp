#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/nn/model.hpp"
#include "u3d/tensor.hpp"

namespace u3d::nn {

/// v <- momentum * v - lr * g;  w <- w + v
template <typename T>
void sgd_step(std::span<T> weights, std::span<T> velocity, std::span<const T> grad, double lr, double momentum) {
  if (weights.size() != velocity.size() || weights.size() != grad.size()) {
    throw ShapeError("sgd_step operand lengths differ");
  }
  const T mu = static_cast<T>(momentum), rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    velocity[i] = mu * velocity[i] - rate * grad[i];
    weights[i] += velocity[i];
  }
}

/// SGD with classical momentum; one velocity buffer per trainable parameter.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  double learning_rate() const { return lr_; }
  double momentum() const { return momentum_; }

  void step(std::vector<Parameter<T>>& params) {
    if (velocity_.empty()) {
      velocity_.reserve(params.size());
      for (const auto& p : params) velocity_.emplace_back(p.value.shape(), T{0});
    }
    if (velocity_.size() != params.size()) throw ShapeError("velocity buffers do not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (velocity_[i].shape() != params[i].value.shape() || params[i].grad.shape() != params[i].value.shape()) {
        throw ShapeError("velocity/gradient shape mismatch for " + params[i].name);
      }
      sgd_step<T>(params[i].value.data(), velocity_[i].data(), params[i].grad.data(), lr_, momentum_);
    }
  }

  std::vector<Tensor<T>>& velocity() { return velocity_; }
  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

 private:
  double lr_;
  double momentum_;
  std::vector<Tensor<T>> velocity_;
};

}  // namespace u3d::nn

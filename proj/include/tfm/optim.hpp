#pragma once

#include <cstdint>
#include <vector>

#include "tfm/layers.hpp"

namespace tfm {

/// Adam over the parameters of a registry. Moment buffers follow the
/// registry order.
template <typename T>
class Adam {
 public:
  Adam(const Registry<T>& reg, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update with learning rate lr from the accumulated
  /// gradients. lr == 0 leaves every parameter untouched.
  void step(double lr);

  std::vector<std::vector<T>> m, v;
  std::uint64_t steps = 0;

 private:
  Registry<T> reg_;
  double beta1_, beta2_, eps_;
};

/// base * (1 + cos(pi * step / total)) / 2.
double cosine_lr(double base, std::size_t step, std::size_t total);

/// Scales all gradients so their global L2 norm is at most max_norm; returns
/// the norm before scaling.
template <typename T>
double clip_grad_norm(Registry<T>& reg, double max_norm);

}  // namespace tfm

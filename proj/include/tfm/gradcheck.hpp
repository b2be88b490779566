#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "tfm/tensor.hpp"

namespace tfm {

using ScalarFunction = std::function<Tensor<double>(const Tensor<double>&)>;

/// Compares the reverse-mode gradient of f at x against central differences.
/// Returns max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|) over the checked
/// coordinates. With max_coords > 0 only that many coordinates, drawn from
/// `seed`, are probed.
double grad_check(const ScalarFunction& f, const Tensor<double>& x, double eps,
                  std::size_t max_coords = 0, std::uint64_t seed = 0);

}  // namespace tfm

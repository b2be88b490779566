#include "tfm/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "tfm/errors.hpp"

namespace tfm::ops {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
using Node = TensorNode<T>;

// Gradient buffer of a parent, or nullptr when it does not need one.
template <typename T>
T* grad_of(Node<T>* p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

template <typename T>
Node<T>* raw(const Tensor<T>& t) {
  return t.node_ptr().get();
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

template <typename T, typename F, typename G>
Tensor<T> unary(const Tensor<T>& a, F forward, G derivative) {
  std::vector<T> out(a.numel());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(av[i]);
  auto* pa = raw(a);
  return make_result<T>(a.shape(), std::move(out), {a}, [pa, derivative](Node<T>& self) {
    T* ga = grad_of(pa);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      ga[i] += self.grad[i] * derivative(pa->value[i], self.value[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto *pa = raw(a), *pb = raw(b);
  return make_result<T>(a.shape(), std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (T* gb = grad_of(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto *pa = raw(a), *pb = raw(b);
  return make_result<T>(a.shape(), std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (T* gb = grad_of(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto *pa = raw(a), *pb = raw(b);
  return make_result<T>(a.shape(), std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * pb->value[i];
    if (T* gb = grad_of(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * pa->value[i];
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "div");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
  auto *pa = raw(a), *pb = raw(b);
  return make_result<T>(a.shape(), std::move(out), {a, b}, [pa, pb](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] / pb->value[i];
    if (T* gb = grad_of(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        gb[i] -= self.grad[i] * self.value[i] / pb->value[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> log_clamped(const Tensor<T>& a, T eps) {
  return unary(
      a, [eps](T x) { return std::log(std::max(x, eps)); },
      [eps](T x, T) { return x > eps ? T(1) / x : T(0); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary(
      a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

template <typename T>
Tensor<T> elu_plus_one(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x + T(1) : std::exp(x); },
      [](T x, T y) { return x > T(0) ? T(1) : y; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  auto* pa = raw(a);
  return make_result<T>({}, {s}, {a}, [pa](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t i = 0; i < pa->value.size(); ++i) ga[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum_rows(const Tensor<T>& a) {
  require_rank(a, 2, "sum_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m, T(0));
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r] += a.values()[r * n + c];
  auto* pa = raw(a);
  return make_result<T>({m}, std::move(out), {a}, [pa, m, n](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += self.grad[r];
  });
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, std::span<const T> weights) {
  if (weights.size() != a.numel()) throw DimensionError("weighted_sum: weight count mismatch");
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * a.values()[i];
  auto* pa = raw(a);
  std::vector<T> w(weights.begin(), weights.end());
  return make_result<T>({}, {s}, {a}, [pa, w = std::move(w)](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t i = 0; i < w.size(); ++i) ga[i] += w[i] * self.grad[0];
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  require_rank(a, 2, "add_row");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (row.numel() != n) throw DimensionError("add_row: row length mismatch");
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a.values()[r * n + c] + row.values()[c];
  auto *pa = raw(a), *pr = raw(row);
  return make_result<T>(a.shape(), std::move(out), {a, row}, [pa, pr, m, n](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t i = 0; i < m * n; ++i) ga[i] += self.grad[i];
    if (T* gr = grad_of(pr))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gr[c] += self.grad[r * n + c];
  });
}

template <typename T>
Tensor<T> mul_row(const Tensor<T>& a, const Tensor<T>& row) {
  require_rank(a, 2, "mul_row");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (row.numel() != n) throw DimensionError("mul_row: row length mismatch");
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a.values()[r * n + c] * row.values()[c];
  auto *pa = raw(a), *pr = raw(row);
  return make_result<T>(a.shape(), std::move(out), {a, row}, [pa, pr, m, n](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += self.grad[r * n + c] * pr->value[c];
    if (T* gr = grad_of(pr))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gr[c] += self.grad[r * n + c] * pa->value[r * n + c];
  });
}

template <typename T>
Tensor<T> div_col(const Tensor<T>& a, const Tensor<T>& d) {
  require_rank(a, 2, "div_col");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (d.numel() != m) throw DimensionError("div_col: divisor length mismatch");
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a.values()[r * n + c] / d.values()[r];
  auto *pa = raw(a), *pd = raw(d);
  return make_result<T>(a.shape(), std::move(out), {a, d}, [pa, pd, m, n](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += self.grad[r * n + c] / pd->value[r];
    if (T* gd = grad_of(pd))
      for (std::size_t r = 0; r < m; ++r) {
        T acc = 0;
        for (std::size_t c = 0; c < n; ++c) acc += self.grad[r * n + c] * self.value[r * n + c];
        gd[r] -= acc / pd->value[r];
      }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  MapR<T>(out.data(), m, n).noalias() = CMapR<T>(a.data(), m, k) * CMapR<T>(b.data(), k, n);
  auto *pa = raw(a), *pb = raw(b);
  return make_result<T>({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](Node<T>& self) {
    CMapR<T> g(self.grad.data(), m, n);
    if (T* ga = grad_of(pa))
      MapR<T>(ga, m, k).noalias() += g * CMapR<T>(pb->value.data(), k, n).transpose();
    if (T* gb = grad_of(pb))
      MapR<T>(gb, k, n).noalias() += CMapR<T>(pa->value.data(), m, k).transpose() * g;
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner extents differ " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  MapR<T>(out.data(), m, n).noalias() =
      CMapR<T>(a.data(), m, k) * CMapR<T>(b.data(), n, k).transpose();
  auto *pa = raw(a), *pb = raw(b);
  return make_result<T>({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](Node<T>& self) {
    CMapR<T> g(self.grad.data(), m, n);
    if (T* ga = grad_of(pa)) MapR<T>(ga, m, k).noalias() += g * CMapR<T>(pb->value.data(), n, k);
    if (T* gb = grad_of(pb))
      MapR<T>(gb, n, k).noalias() += g.transpose() * CMapR<T>(pa->value.data(), m, k);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  MapR<T>(out.data(), n, m) = CMapR<T>(a.data(), m, n).transpose();
  auto* pa = raw(a);
  return make_result<T>({n, m}, std::move(out), {a}, [pa, m, n](Node<T>& self) {
    if (T* ga = grad_of(pa)) MapR<T>(ga, m, n) += CMapR<T>(self.grad.data(), n, m).transpose();
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  require_rank(a, 2, "softmax_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const T* x = a.data() + r * n;
    T* y = out.data() + r * n;
    const T mx = *std::max_element(x, x + n);
    T z = 0;
    for (std::size_t c = 0; c < n; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < n; ++c) y[c] /= z;
  }
  auto* pa = raw(a);
  return make_result<T>({m, n}, std::move(out), {a}, [pa, m, n](Node<T>& self) {
    T* ga = grad_of(pa);
    if (!ga) return;
    for (std::size_t r = 0; r < m; ++r) {
      const T* y = self.value.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += y[c] * (g[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> softmax_cols(const Tensor<T>& a) {
  require_rank(a, 2, "softmax_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  for (std::size_t c = 0; c < n; ++c) {
    T mx = a.values()[c];
    for (std::size_t r = 1; r < m; ++r) mx = std::max(mx, a.values()[r * n + c]);
    T z = 0;
    for (std::size_t r = 0; r < m; ++r) z += (out[r * n + c] = std::exp(a.values()[r * n + c] - mx));
    for (std::size_t r = 0; r < m; ++r) out[r * n + c] /= z;
  }
  auto* pa = raw(a);
  return make_result<T>({m, n}, std::move(out), {a}, [pa, m, n](Node<T>& self) {
    T* ga = grad_of(pa);
    if (!ga) return;
    for (std::size_t c = 0; c < n; ++c) {
      T dot = 0;
      for (std::size_t r = 0; r < m; ++r) dot += self.grad[r * n + c] * self.value[r * n + c];
      for (std::size_t r = 0; r < m; ++r)
        ga[r * n + c] += self.value[r * n + c] * (self.grad[r * n + c] - dot);
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.values().begin(), a.values().end());
  auto* pa = raw(a);
  return make_result<T>(std::move(shape), std::move(out), {a}, [pa](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t len) {
  require_rank(a, 2, "slice_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (start + len > n) throw DimensionError("slice_cols: range exceeds width");
  std::vector<T> out(m * len);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(a.data() + r * n + start, len, out.data() + r * len);
  auto* pa = raw(a);
  return make_result<T>({m, len}, std::move(out), {a}, [pa, m, n, start, len](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < len; ++c) ga[r * n + start + c] += self.grad[r * len + c];
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(n);
    n += p.dim(1);
  }
  std::vector<T> out(m * n);
  std::vector<Node<T>*> nodes;
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t w = parts[i].dim(1);
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(parts[i].data() + r * w, w, out.data() + r * n + offsets[i]);
    nodes.push_back(raw(parts[i]));
    widths.push_back(w);
  }
  return make_result<T>({m, n}, std::move(out), parts, [nodes, widths, offsets, m, n](Node<T>& self) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      T* g = grad_of(nodes[i]);
      if (!g) continue;
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < widths[i]; ++c)
          g[r * widths[i] + c] += self.grad[r * n + offsets[i] + c];
    }
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].dim(1);
  std::size_t m = 0;
  std::vector<Node<T>*> nodes;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != n) throw DimensionError("concat_rows: widths differ");
    offsets.push_back(m * n);
    m += p.dim(0);
    nodes.push_back(raw(p));
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result<T>({m, n}, std::move(out), parts, [nodes, offsets](Node<T>& self) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      T* g = grad_of(nodes[i]);
      if (!g) continue;
      for (std::size_t j = 0; j < nodes[i]->value.size(); ++j) g[j] += self.grad[offsets[i] + j];
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows) {
  require_rank(a, 2, "gather_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(rows.size() * n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m) throw DimensionError("gather_rows: index out of range");
    std::copy_n(a.data() + rows[r] * n, n, out.data() + r * n);
  }
  auto* pa = raw(a);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result<T>({idx.size(), n}, std::move(out), {a}, [pa, idx, n](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < n; ++c) ga[idx[r] * n + c] += self.grad[r * n + c];
  });
}

template <typename T>
Tensor<T> index_put_rows(const Tensor<T>& base, std::span<const std::size_t> rows,
                         const Tensor<T>& src) {
  require_rank(base, 2, "index_put_rows");
  require_rank(src, 2, "index_put_rows");
  const std::size_t m = base.dim(0), n = base.dim(1);
  if (src.dim(1) != n || src.dim(0) != rows.size())
    throw DimensionError("index_put_rows: source shape mismatch");
  std::vector<T> out(base.values().begin(), base.values().end());
  std::vector<char> replaced(m, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m) throw DimensionError("index_put_rows: index out of range");
    if (replaced[rows[r]]) throw ContractError("index_put_rows: duplicate row index");
    replaced[rows[r]] = 1;
    std::copy_n(src.data() + r * n, n, out.data() + rows[r] * n);
  }
  auto *pb = raw(base), *ps = raw(src);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result<T>(
      {m, n}, std::move(out), {base, src},
      [pb, ps, idx, replaced = std::move(replaced), m, n](Node<T>& self) {
        if (T* gb = grad_of(pb))
          for (std::size_t r = 0; r < m; ++r)
            if (!replaced[r])
              for (std::size_t c = 0; c < n; ++c) gb[r * n + c] += self.grad[r * n + c];
        if (T* gs = grad_of(ps))
          for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < n; ++c) gs[r * n + c] += self.grad[idx[r] * n + c];
      });
}

template <typename T>
Tensor<T> gather_flat(const Tensor<T>& a, std::span<const std::size_t> idx) {
  std::vector<T> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.numel()) throw DimensionError("gather_flat: index out of range");
    out[i] = a.values()[idx[i]];
  }
  auto* pa = raw(a);
  std::vector<std::size_t> ix(idx.begin(), idx.end());
  return make_result<T>({ix.size()}, std::move(out), {a}, [pa, ix](Node<T>& self) {
    if (T* ga = grad_of(pa))
      for (std::size_t i = 0; i < ix.size(); ++i) ga[ix[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> scatter_add_flat(const Tensor<T>& src, std::span<const std::size_t> idx, std::size_t n) {
  if (idx.size() != src.numel()) throw DimensionError("scatter_add_flat: index count mismatch");
  std::vector<T> out(n, T(0));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw DimensionError("scatter_add_flat: index out of range");
    out[idx[i]] += src.values()[i];
  }
  auto* ps = raw(src);
  std::vector<std::size_t> ix(idx.begin(), idx.end());
  return make_result<T>({n}, std::move(out), {src}, [ps, ix](Node<T>& self) {
    if (T* gs = grad_of(ps))
      for (std::size_t i = 0; i < ix.size(); ++i) gs[i] += self.grad[ix[i]];
  });
}

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_rank(x, 2, "layer_norm_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n || beta.numel() != n) throw DimensionError("layer_norm_rows: affine size");
  std::vector<T> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* xr = x.data() + r * n;
    T mu = 0;
    for (std::size_t c = 0; c < n; ++c) mu += xr[c];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (xr[c] - mu) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * gamma.values()[c] + beta.values()[c];
    }
  }
  auto *px = raw(x), *pg = raw(gamma), *pb = raw(beta);
  return make_result<T>(
      {m, n}, std::move(out), {x, gamma, beta},
      [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](Node<T>& self) {
        const T* g = self.grad.data();
        if (T* gg = grad_of(pg))
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gg[c] += g[r * n + c] * xhat[r * n + c];
        if (T* gb = grad_of(pb))
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
        if (T* gx = grad_of(px)) {
          std::vector<T> gh(n);
          for (std::size_t r = 0; r < m; ++r) {
            T s1 = 0, s2 = 0;
            for (std::size_t c = 0; c < n; ++c) {
              gh[c] = g[r * n + c] * pg->value[c];
              s1 += gh[c];
              s2 += gh[c] * xhat[r * n + c];
            }
            const T k = inv_std[r] / static_cast<T>(n);
            for (std::size_t c = 0; c < n; ++c)
              gx[r * n + c] += k * (static_cast<T>(n) * gh[c] - s1 - xhat[r * n + c] * s2);
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k) throw DimensionError("conv2d: weight shape mismatch");
  if (bias.defined() && bias.numel() != cout) throw DimensionError("conv2d: bias length mismatch");
  if (stride == 0 || h + 2 * pad < k || wd + 2 * pad < k) throw DimensionError("conv2d: bad geometry");
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - k) / stride + 1;
  const std::size_t patch = cin * k * k, npix = ho * wo;

  auto cols = std::make_shared<std::vector<T>>(batch * patch * npix);
  std::vector<T> out(batch * cout * npix);
  CMapR<T> wm(w.data(), cout, patch);
  for (std::size_t b = 0; b < batch; ++b) {
    T* col = cols->data() + b * patch * npix;
    const T* xb = x.data() + b * cin * h * wd;
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          T* row = col + ((ci * k + ky) * k + kx) * npix;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            T* dst = row + oy * wo;
            if (iy < 0 || iy >= static_cast<long>(h)) {
              std::fill_n(dst, wo, T(0));
              continue;
            }
            const T* src = xb + (ci * h + static_cast<std::size_t>(iy)) * wd;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              dst[ox] = (ix < 0 || ix >= static_cast<long>(wd)) ? T(0) : src[ix];
            }
          }
        }
    MapR<T> y(out.data() + b * cout * npix, cout, npix);
    y.noalias() = wm * CMapR<T>(col, patch, npix);
    if (bias.defined())
      for (std::size_t co = 0; co < cout; ++co) y.row(co).array() += bias.values()[co];
  }

  auto *px = raw(x), *pw = raw(w);
  Node<T>* pbias = bias.defined() ? raw(bias) : nullptr;
  std::vector<Tensor<T>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(
      {batch, cout, ho, wo}, std::move(out), parents,
      [=](Node<T>& self) {
        T* gw = grad_of(pw);
        T* gb = pbias ? grad_of(pbias) : nullptr;
        T* gx = grad_of(px);
        std::vector<T> dcol(gx ? patch * npix : 0);
        for (std::size_t b = 0; b < batch; ++b) {
          CMapR<T> gy(self.grad.data() + b * cout * npix, cout, npix);
          const T* col = cols->data() + b * patch * npix;
          if (gw) MapR<T>(gw, cout, patch).noalias() += gy * CMapR<T>(col, patch, npix).transpose();
          if (gb)
            for (std::size_t co = 0; co < cout; ++co) gb[co] += gy.row(co).sum();
          if (!gx) continue;
          MapR<T>(dcol.data(), patch, npix).noalias() =
              CMapR<T>(pw->value.data(), cout, patch).transpose() * gy;
          T* gxb = gx + b * cin * h * wd;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = dcol.data() + ((ci * k + ky) * k + kx) * npix;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  T* dst = gxb + (ci * h + static_cast<std::size_t>(iy)) * wd;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (ix >= 0 && ix < static_cast<long>(wd)) dst[ix] += row[oy * wo + ox];
                  }
                }
              }
        }
      });
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                       T momentum, T eps) {
  require_rank(x, 4, "batch_norm2d");
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != ch || beta.numel() != ch || running_mean.size() != ch ||
      running_var.size() != ch)
    throw DimensionError("batch_norm2d: channel count mismatch");
  const std::size_t count = batch * plane;
  std::vector<T> mean(ch), inv_std(ch);
  if (training) {
    for (std::size_t c = 0; c < ch; ++c) {
      T mu = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * ch + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mu += p[i];
      }
      mu /= static_cast<T>(count);
      T var = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * ch + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      var /= static_cast<T>(count);
      mean[c] = mu;
      inv_std[c] = T(1) / std::sqrt(var + eps);
      const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }
  std::vector<T> out(x.numel()), xhat(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t off = (b * ch + c) * plane;
      const T gm = gamma.values()[c], bt = beta.values()[c];
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[off + i] = (x.data()[off + i] - mean[c]) * inv_std[c];
        out[off + i] = xhat[off + i] * gm + bt;
      }
    }
  auto *px = raw(x), *pg = raw(gamma), *pb = raw(beta);
  return make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        std::vector<T> sg(ch, T(0)), sgx(ch, T(0));
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t off = (b * ch + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sg[c] += self.grad[off + i];
              sgx[c] += self.grad[off + i] * xhat[off + i];
            }
          }
        if (T* gg = grad_of(pg))
          for (std::size_t c = 0; c < ch; ++c) gg[c] += sgx[c];
        if (T* gb = grad_of(pb))
          for (std::size_t c = 0; c < ch; ++c) gb[c] += sg[c];
        T* gx = grad_of(px);
        if (!gx) return;
        const T n = static_cast<T>(count);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t off = (b * ch + c) * plane;
            const T gm = pg->value[c];
            for (std::size_t i = 0; i < plane; ++i) {
              if (training) {
                gx[off + i] += gm * inv_std[c] / n *
                               (n * self.grad[off + i] - sg[c] - xhat[off + i] * sgx[c]);
              } else {
                gx[off + i] += gm * inv_std[c] * self.grad[off + i];
              }
            }
          }
      });
}

namespace {

struct Lerp {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Lerp> upsample_table(std::size_t in) {
  std::vector<Lerp> t(2 * in);
  for (std::size_t o = 0; o < 2 * in; ++o) {
    const double src = std::max(0.0, (static_cast<double>(o) + 0.5) * 0.5 - 0.5);
    const auto i0 = std::min(static_cast<std::size_t>(src), in - 1);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double w1 = src - static_cast<double>(i0);
    t[o] = {i0, i1, 1.0 - w1, w1};
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  require_rank(x, 4, "upsample2x");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = 2 * h, wo = 2 * w;
  const auto ty = upsample_table(h), tx = upsample_table(w);
  std::vector<T> out(batch * ch * ho * wo);
  for (std::size_t p = 0; p < batch * ch; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = out.data() + p * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const auto& ly = ty[oy];
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const auto& lx = tx[ox];
        dst[oy * wo + ox] =
            static_cast<T>(ly.w0 * (lx.w0 * src[ly.i0 * w + lx.i0] + lx.w1 * src[ly.i0 * w + lx.i1]) +
                           ly.w1 * (lx.w0 * src[ly.i1 * w + lx.i0] + lx.w1 * src[ly.i1 * w + lx.i1]));
      }
    }
  }
  auto* px = raw(x);
  return make_result<T>({batch, ch, ho, wo}, std::move(out), {x}, [=](Node<T>& self) {
    T* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t p = 0; p < batch * ch; ++p) {
      const T* g = self.grad.data() + p * ho * wo;
      T* dst = gx + p * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const auto& ly = ty[oy];
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const auto& lx = tx[ox];
          const T v = g[oy * wo + ox];
          dst[ly.i0 * w + lx.i0] += static_cast<T>(ly.w0 * lx.w0) * v;
          dst[ly.i0 * w + lx.i1] += static_cast<T>(ly.w0 * lx.w1) * v;
          dst[ly.i1 * w + lx.i0] += static_cast<T>(ly.w1 * lx.w0) * v;
          dst[ly.i1 * w + lx.i1] += static_cast<T>(ly.w1 * lx.w1) * v;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t h, std::size_t w) {
  require_rank(x, 4, "crop2d");
  const std::size_t batch = x.dim(0), ch = x.dim(1), hi = x.dim(2), wi = x.dim(3);
  if (h > hi || w > wi) throw DimensionError("crop2d: window larger than map");
  if (h == hi && w == wi) return x;
  std::vector<T> out(batch * ch * h * w);
  for (std::size_t p = 0; p < batch * ch; ++p)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(x.data() + (p * hi + y) * wi, w, out.data() + (p * h + y) * w);
  auto* px = raw(x);
  return make_result<T>({batch, ch, h, w}, std::move(out), {x}, [=](Node<T>& self) {
    if (T* gx = grad_of(px))
      for (std::size_t p = 0; p < batch * ch; ++p)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t c = 0; c < w; ++c) gx[(p * hi + y) * wi + c] += self.grad[(p * h + y) * w + c];
  });
}

template <typename T>
Tensor<T> to_rows(const Tensor<T>& x, std::size_t n) {
  require_rank(x, 4, "to_rows");
  const std::size_t ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (n >= x.dim(0)) throw DimensionError("to_rows: batch index out of range");
  std::vector<T> out(plane * ch);
  const T* src = x.data() + n * ch * plane;
  MapR<T>(out.data(), plane, ch) = CMapR<T>(src, ch, plane).transpose();
  auto* px = raw(x);
  return make_result<T>({plane, ch}, std::move(out), {x}, [=](Node<T>& self) {
    if (T* gx = grad_of(px))
      MapR<T>(gx + n * ch * plane, ch, plane) += CMapR<T>(self.grad.data(), plane, ch).transpose();
  });
}

#define TFM_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                                   \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                              \
  template Tensor<T> exp(const Tensor<T>&);                                                        \
  template Tensor<T> log(const Tensor<T>&);                                                        \
  template Tensor<T> log_clamped(const Tensor<T>&, T);                                             \
  template Tensor<T> square(const Tensor<T>&);                                                     \
  template Tensor<T> relu(const Tensor<T>&);                                                       \
  template Tensor<T> gelu(const Tensor<T>&);                                                       \
  template Tensor<T> elu_plus_one(const Tensor<T>&);                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                        \
  template Tensor<T> mean(const Tensor<T>&);                                                       \
  template Tensor<T> sum_rows(const Tensor<T>&);                                                   \
  template Tensor<T> weighted_sum(const Tensor<T>&, std::span<const T>);                           \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul_row(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> div_col(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> transpose(const Tensor<T>&);                                                  \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                               \
  template Tensor<T> softmax_cols(const Tensor<T>&);                                               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                   \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                   \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                  \
  template Tensor<T> index_put_rows(const Tensor<T>&, std::span<const std::size_t>,               \
                                    const Tensor<T>&);                                             \
  template Tensor<T> gather_flat(const Tensor<T>&, std::span<const std::size_t>);                  \
  template Tensor<T> scatter_add_flat(const Tensor<T>&, std::span<const std::size_t>,             \
                                      std::size_t);                                                \
  template Tensor<T> layer_norm_rows(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,    \
                            std::size_t);                                                          \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                  std::vector<T>&, std::vector<T>&, bool, T, T);                   \
  template Tensor<T> upsample2x(const Tensor<T>&);                                                 \
  template Tensor<T> crop2d(const Tensor<T>&, std::size_t, std::size_t);                           \
  template Tensor<T> to_rows(const Tensor<T>&, std::size_t);

TFM_INSTANTIATE_OPS(float)
TFM_INSTANTIATE_OPS(double)

}  // namespace tfm::ops

#include "tfm/attention.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numeric>

#include "tfm/errors.hpp"

namespace tfm {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Block = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CBlock = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

// View of rows [row0, row0 + rows) and the columns of one head.
template <typename T>
CBlock<T> head_view(const T* base, std::size_t row0, std::size_t rows, std::size_t h,
                    std::size_t dh, std::size_t d) {
  return CBlock<T>(base + row0 * d + h * dh, static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
}

template <typename T>
Block<T> head_view(T* base, std::size_t row0, std::size_t rows, std::size_t h, std::size_t dh,
                   std::size_t d) {
  return Block<T>(base + row0 * d + h * dh, static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
}

template <typename T>
MatR<T> elu1(const MatR<T>& x) {
  return x.unaryExpr([](T a) { return a > T(0) ? a + T(1) : std::exp(a); });
}

template <typename T>
MatR<T> elu1_grad(const MatR<T>& x) {
  return x.unaryExpr([](T a) { return a > T(0) ? T(1) : std::exp(a); });
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  for (T v : t.values())
    if (!std::isfinite(v)) throw NumericError(std::string("attention: non-finite value in ") + what);
}

}  // namespace

AttentionKernel parse_kernel(const std::string& name) {
  if (name == "dot") return AttentionKernel::dot;
  if (name == "linear") return AttentionKernel::linear;
  throw ConfigError("unknown attention kernel '" + name + "' (expected dot or linear)");
}

std::string kernel_name(AttentionKernel kernel) {
  return kernel == AttentionKernel::dot ? "dot" : "linear";
}

std::uint64_t FlopCounter::total() const {
  std::uint64_t t = 0;
  for (const auto& [op, n] : breakdown_) t += n;
  return t;
}

std::uint64_t attention_core_flops(AttentionKernel kernel, std::size_t n_q, std::size_t n_k,
                                   std::size_t d, std::size_t heads) {
  if (n_q == 0) return 0;
  const std::uint64_t dh = d / heads;
  if (kernel == AttentionKernel::dot) {
    // Q K^T and P V.
    return 2ULL * n_q * n_k * d;
  }
  // phi(K)^T V, key sums, phi(Q) KV and the normalizer, per head.
  return heads * ((n_k + n_q) * dh * dh + (n_k + n_q) * dh);
}

template <typename T>
Tensor<T> segmented_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              std::size_t heads, std::span<const std::size_t> q_segments,
                              std::span<const std::size_t> kv_segments, AttentionKernel kernel,
                              FlopCounter* flops) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw DimensionError("attention: rank-2 inputs expected");
  const std::size_t n_q = q.dim(0), n_k = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != n_k)
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " do not fit");
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: width not divisible by heads");
  if (q_segments.size() != kv_segments.size())
    throw DimensionError("attention: segment lists differ in length");
  if (std::accumulate(q_segments.begin(), q_segments.end(), std::size_t{0}) != n_q ||
      std::accumulate(kv_segments.begin(), kv_segments.end(), std::size_t{0}) != n_k)
    throw DimensionError("attention: segment lengths do not cover the inputs");
  for (std::size_t g = 0; g < q_segments.size(); ++g)
    if (q_segments[g] > 0 && kv_segments[g] == 0)
      throw DimensionError("attention: query segment without keys");
  check_finite(q, "queries");
  check_finite(k, "keys");
  check_finite(v, "values");

  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const std::vector<std::size_t> qs(q_segments.begin(), q_segments.end());
  const std::vector<std::size_t> ks(kv_segments.begin(), kv_segments.end());

  std::vector<T> out(n_q * d, T(0));
  // Dot kernel keeps the attention matrices for the backward pass.
  auto probs = std::make_shared<std::vector<T>>();
  std::size_t q0 = 0, k0 = 0;
  for (std::size_t g = 0; g < qs.size(); ++g) {
    const std::size_t m = qs[g], n = ks[g];
    if (m > 0) {
      if (flops) flops->add(kernel == AttentionKernel::dot ? "attention.dot" : "attention.linear",
                            attention_core_flops(kernel, m, n, d, heads));
      for (std::size_t h = 0; h < heads; ++h) {
        auto Q = head_view(q.data(), q0, m, h, dh, d);
        auto K = head_view(k.data(), k0, n, h, dh, d);
        auto V = head_view(v.data(), k0, n, h, dh, d);
        auto O = head_view(out.data(), q0, m, h, dh, d);
        if (kernel == AttentionKernel::dot) {
          MatR<T> s = (Q * K.transpose()) * scale;
          for (Eigen::Index r = 0; r < s.rows(); ++r) {
            const T mx = s.row(r).maxCoeff();
            s.row(r) = (s.row(r).array() - mx).exp();
            s.row(r) /= s.row(r).sum();
          }
          O.noalias() = s * V;
          probs->insert(probs->end(), s.data(), s.data() + s.size());
        } else {
          const MatR<T> fq = elu1<T>(Q), fk = elu1<T>(K);
          const MatR<T> kv = fk.transpose() * V;
          const Eigen::Matrix<T, Eigen::Dynamic, 1> ksum = fk.colwise().sum().transpose();
          const Eigen::Matrix<T, Eigen::Dynamic, 1> den = fq * ksum;
          if (den.minCoeff() < T(1e-12)) throw NumericError("linear attention: vanishing normalizer");
          O = ((fq * kv).array().colwise() / den.array()).matrix();
        }
      }
    }
    q0 += m;
    k0 += n;
  }

  auto *pq = q.node_ptr().get(), *pk = k.node_ptr().get(), *pv = v.node_ptr().get();
  return make_result<T>(
      {n_q, d}, std::move(out), {q, k, v},
      [=](TensorNode<T>& self) {
        T* gq = nullptr;
        T* gk = nullptr;
        T* gv = nullptr;
        if (pq->requires_grad) { pq->ensure_grad(); gq = pq->grad.data(); }
        if (pk->requires_grad) { pk->ensure_grad(); gk = pk->grad.data(); }
        if (pv->requires_grad) { pv->ensure_grad(); gv = pv->grad.data(); }
        // Scratch for parents that do not need a gradient.
        std::vector<T> sink_q(gq ? 0 : n_q * d), sink_k(gk ? 0 : n_k * d), sink_v(gv ? 0 : n_k * d);
        if (!gq) gq = sink_q.data();
        if (!gk) gk = sink_k.data();
        if (!gv) gv = sink_v.data();
        std::size_t q0 = 0, k0 = 0, p0 = 0;
        for (std::size_t g = 0; g < qs.size(); ++g) {
          const std::size_t m = qs[g], n = ks[g];
          if (m > 0) {
            for (std::size_t h = 0; h < heads; ++h) {
              auto Q = head_view(pq->value.data(), q0, m, h, dh, d);
              auto K = head_view(pk->value.data(), k0, n, h, dh, d);
              auto V = head_view(pv->value.data(), k0, n, h, dh, d);
              auto dO = head_view(self.grad.data(), q0, m, h, dh, d);
              auto dQ = head_view(gq, q0, m, h, dh, d);
              auto dK = head_view(gk, k0, n, h, dh, d);
              auto dV = head_view(gv, k0, n, h, dh, d);
              if (kernel == AttentionKernel::dot) {
                Eigen::Map<const MatR<T>> P(probs->data() + p0, static_cast<Eigen::Index>(m),
                                            static_cast<Eigen::Index>(n));
                p0 += m * n;
                dV.noalias() += P.transpose() * dO;
                MatR<T> dP = dO * V.transpose();
                const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = (dP.array() * P.array()).rowwise().sum();
                MatR<T> dS = (P.array() * (dP.array().colwise() - rs.array())).matrix() * scale;
                dQ.noalias() += dS * K;
                dK.noalias() += dS.transpose() * Q;
              } else {
                const MatR<T> qm = Q, km = K;
                const MatR<T> fq = elu1<T>(qm), fk = elu1<T>(km);
                const MatR<T> kv = fk.transpose() * V;
                const Eigen::Matrix<T, Eigen::Dynamic, 1> ksum = fk.colwise().sum().transpose();
                const Eigen::Matrix<T, Eigen::Dynamic, 1> den = fq * ksum;
                auto O = head_view(self.value.data(), q0, m, h, dh, d);
                const MatR<T> dnum = dO.array().colwise() / den.array();
                const Eigen::Matrix<T, Eigen::Dynamic, 1> dden =
                    -((dO.array() * O.array()).rowwise().sum() / den.array()).matrix();
                const MatR<T> dfq = dnum * kv.transpose() + dden * ksum.transpose();
                const MatR<T> dkv = fq.transpose() * dnum;
                const Eigen::Matrix<T, Eigen::Dynamic, 1> dks = fq.transpose() * dden;
                MatR<T> dfk = V * dkv.transpose();
                dfk.rowwise() += dks.transpose();
                dV.noalias() += fk * dkv;
                dQ += (dfq.array() * elu1_grad<T>(qm).array()).matrix();
                dK += (dfk.array() * elu1_grad<T>(km).array()).matrix();
              }
            }
          }
          q0 += m;
          k0 += n;
        }
      });
}

template <typename T>
Tensor<T> dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                std::size_t heads, FlopCounter* flops) {
  const std::size_t nq = q.rank() == 2 ? q.dim(0) : 0, nk = k.rank() == 2 ? k.dim(0) : 0;
  if (nq == 0 || nk == 0) throw DimensionError("attention: empty query or key set");
  const std::size_t a[1] = {nq}, b[1] = {nk};
  return segmented_attention(q, k, v, heads, a, b, AttentionKernel::dot, flops);
}

template <typename T>
Tensor<T> linear_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t heads, FlopCounter* flops) {
  const std::size_t nq = q.rank() == 2 ? q.dim(0) : 0, nk = k.rank() == 2 ? k.dim(0) : 0;
  if (nq == 0 || nk == 0) throw DimensionError("attention: empty query or key set");
  const std::size_t a[1] = {nq}, b[1] = {nk};
  return segmented_attention(q, k, v, heads, a, b, AttentionKernel::linear, flops);
}

#define TFM_INSTANTIATE_ATTENTION(T)                                                              \
  template Tensor<T> segmented_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                         std::size_t, std::span<const std::size_t>,              \
                                         std::span<const std::size_t>, AttentionKernel,          \
                                         FlopCounter*);                                          \
  template Tensor<T> dot_product_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                           std::size_t, FlopCounter*);                           \
  template Tensor<T> linear_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                      std::size_t, FlopCounter*);

TFM_INSTANTIATE_ATTENTION(float)
TFM_INSTANTIATE_ATTENTION(double)

}  // namespace tfm

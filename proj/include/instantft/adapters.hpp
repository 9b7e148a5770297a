#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <type_traits>
#include <vector>

#include "instantft/kernels.hpp"
#include "instantft/tensor.hpp"

namespace instantft {

// Low-rank pair (A, B) wired from activation x^src into the output of layer dst
// (dst is 1-based, matching layer numbering x^dst = f(x^{dst-1})).
// delta = B * (A * vec(x^src)).
template <typename Scalar>
struct Adapter {
  int src = 0;
  int dst = 0;
  Mat<Scalar> A;  // [r, d_in]
  Mat<Scalar> B;  // [d_out, r]

  Index rank() const { return A.rows(); }
  Index in_dim() const { return A.cols(); }
  Index out_dim() const { return B.rows(); }
  Index param_count() const { return A.size() + B.size(); }

  template <typename To>
  Adapter<To> cast() const {
    return {src, dst, A.template cast<To>(), B.template cast<To>()};
  }

  bool operator==(const Adapter& o) const { return src == o.src && dst == o.dst && A == o.A && B == o.B; }
};

template <typename Scalar>
using AdapterSet = std::vector<Adapter<Scalar>>;

template <typename Scalar>
struct AdapterGrads {
  Mat<Scalar> dA;
  Mat<Scalar> dB;
};

// A ~ N(0, 1/d_in), B = 0.
template <typename Scalar>
Adapter<Scalar> make_adapter(int src, int dst, Index d_in, Index d_out, Index rank, std::mt19937_64& rng) {
  Adapter<Scalar> a{src, dst, Mat<Scalar>(rank, d_in), Mat<Scalar>::Zero(d_out, rank)};
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));
  for (Index i = 0; i < a.A.size(); ++i) a.A.data()[i] = static_cast<Scalar>(gauss(rng));
  return a;
}

// Non-deduced so Vec and Map arguments bind without explicit template arguments.
template <typename Scalar>
using ConstVecRef = std::type_identity_t<Eigen::Ref<const Vec<Scalar>>>;

template <typename Scalar>
struct AdapterForward {
  Vec<Scalar> h;
  Vec<Scalar> delta;
};

template <typename Scalar>
AdapterForward<Scalar> adapter_forward(const Adapter<Scalar>& a, const ConstVecRef<Scalar>& x,
                                       FlopCounter* flops = nullptr) {
  if (x.size() != a.in_dim()) {
    throw ShapeError("adapter_forward: input has " + std::to_string(x.size()) + " values, adapter expects " +
                     std::to_string(a.in_dim()));
  }
  AdapterForward<Scalar> f;
  f.h = a.A * x;
  f.delta = a.B * f.h;
  count_fwd(flops, 2 * a.rank() * (a.in_dim() + a.out_dim()));
  return f;
}

// dB = dout h^T; dh = B^T dout; dA = dh x^T; and when dx is given,
// dx += A^T dh (the activation-gradient accumulation for the source tap).
template <typename Scalar>
AdapterGrads<Scalar> adapter_backward(const Adapter<Scalar>& a, const ConstVecRef<Scalar>& dout,
                                      const ConstVecRef<Scalar>& x, const ConstVecRef<Scalar>& h,
                                      Vec<Scalar>* dx = nullptr, FlopCounter* flops = nullptr) {
  if (dout.size() != a.out_dim() || x.size() != a.in_dim() || h.size() != a.rank()) {
    throw ShapeError("adapter_backward: shape mismatch");
  }
  AdapterGrads<Scalar> g;
  g.dB = dout * h.transpose();
  const Vec<Scalar> dh = a.B.transpose() * dout;
  g.dA = dh * x.transpose();
  count_bwd(flops, 4 * a.out_dim() * a.rank() + 2 * a.rank() * a.in_dim());
  if (dx) {
    if (dx->size() != a.in_dim()) throw ShapeError("adapter_backward: dx size mismatch");
    *dx += a.A.transpose() * dh;
    count_bwd(flops, 2 * a.rank() * a.in_dim());
  }
  return g;
}

}  // namespace instantft

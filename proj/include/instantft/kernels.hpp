#pragma once

// Forward/backward kernels for the layers of the LeNet-style backbone.
// Every kernel is templated on the scalar type: float is the working
// precision, double is the shadow precision used by gradient checks.
//
// FLOP accounting (per call, added to an optional FlopCounter):
//   matvec / matmul        2 per multiply-accumulate
//   bias add               1 per output element
//   ReLU                   1 per element (forward and backward)
//   2x2 max-pool forward   3 comparisons per window, backward free
//   weight gradient        2 per element per accumulated position
//   bias gradient          1 per output element
//   softmax/CE backward    1 per class (p - onehot)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "instantft/tensor.hpp"

namespace instantft {

struct FlopCounter {
  std::int64_t forward = 0;
  std::int64_t backward = 0;

  void add_forward(std::int64_t n) { forward += n; }
  void add_backward(std::int64_t n) { backward += n; }
  FlopCounter& operator+=(const FlopCounter& o) {
    forward += o.forward;
    backward += o.backward;
    return *this;
  }
};

inline void count_fwd(FlopCounter* c, std::int64_t n) {
  if (c) c->add_forward(n);
}
inline void count_bwd(FlopCounter* c, std::int64_t n) {
  if (c) c->add_backward(n);
}

// Which gradients a backward kernel should form. Skipping `input` is how a
// frozen prefix avoids computing activation gradients nobody consumes.
struct GradRequest {
  bool weight = true;
  bool bias = true;
  bool input = true;
};

template <typename Scalar>
struct LayerGrads {
  Tensor<Scalar> dweight;  // empty unless requested
  Tensor<Scalar> dbias;
  Tensor<Scalar> dinput;
};

namespace detail {

// out = W * X, then bias broadcast over columns. Shared by conv and FC so a
// 5x5 conv over a 5x5 input reproduces the FC result exactly.
template <typename Scalar>
Mat<Scalar> affine(ConstMatMap<Scalar> weight, const Mat<Scalar>& cols, const Vec<Scalar>& bias) {
  Mat<Scalar> out = weight * cols;
  out.colwise() += bias;
  return out;
}

// dW = D * X^T.
template <typename Scalar>
Mat<Scalar> weight_grad(const Mat<Scalar>& dout, const Mat<Scalar>& cols) {
  return dout * cols.transpose();
}

inline Index conv_out_dim(Index in, Index kernel, Index padding) { return in + 2 * padding - kernel + 1; }

// Unfolds [c, h, w] into [c*k*k, oh*ow]; out-of-bounds taps read zero.
template <typename Scalar>
Mat<Scalar> im2col(const Tensor<Scalar>& x, Index kernel, Index padding) {
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index oh = conv_out_dim(h, kernel, padding), ow = conv_out_dim(w, kernel, padding);
  Mat<Scalar> cols = Mat<Scalar>::Zero(c * kernel * kernel, oh * ow);
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ky = 0; ky < kernel; ++ky) {
      for (Index kx = 0; kx < kernel; ++kx) {
        const Index row = (ci * kernel + ky) * kernel + kx;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy + ky - padding;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox + kx - padding;
            if (ix < 0 || ix >= w) continue;
            cols(row, oy * ow + ox) = x[(ci * h + iy) * w + ix];
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-add columns back to [c, h, w].
template <typename Scalar>
Tensor<Scalar> col2im(const Mat<Scalar>& cols, const Shape& in_shape, Index kernel, Index padding) {
  const Index c = in_shape[0], h = in_shape[1], w = in_shape[2];
  const Index oh = conv_out_dim(h, kernel, padding), ow = conv_out_dim(w, kernel, padding);
  Tensor<Scalar> x(in_shape);
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ky = 0; ky < kernel; ++ky) {
      for (Index kx = 0; kx < kernel; ++kx) {
        const Index row = (ci * kernel + ky) * kernel + kx;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy + ky - padding;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox + kx - padding;
            if (ix < 0 || ix >= w) continue;
            x[(ci * h + iy) * w + ix] += cols(row, oy * ow + ox);
          }
        }
      }
    }
  }
  return x;
}

template <typename Scalar>
Mat<Scalar> as_column(const Tensor<Scalar>& x) {
  return Eigen::Map<const Mat<Scalar>>(x.data(), x.size(), 1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> fc_forward(const Tensor<Scalar>& x, const LayerParams<Scalar>& p, FlopCounter* flops = nullptr) {
  if (p.is_conv()) throw ShapeError("fc_forward: convolution weights");
  const Index d_out = p.weight.dim(0), d_in = p.weight.dim(1);
  if (x.size() != d_in) {
    throw ShapeError("fc_forward: input has " + std::to_string(x.size()) + " values, layer expects " +
                     std::to_string(d_in));
  }
  if (p.bias.size() != d_out) throw ShapeError("fc_forward: bias size mismatch");
  Mat<Scalar> out = detail::affine<Scalar>(p.weight_matrix(), detail::as_column(x), p.bias.vec());
  count_fwd(flops, 2 * d_in * d_out + d_out);
  Tensor<Scalar> y({d_out}, Eigen::Map<const Vec<Scalar>>(out.data(), d_out));
  ensure_finite(y, "fc_forward");
  return y;
}

template <typename Scalar>
LayerGrads<Scalar> fc_backward(const Tensor<Scalar>& dout, const Tensor<Scalar>& x_in, const LayerParams<Scalar>& p,
                               GradRequest req = {}, FlopCounter* flops = nullptr) {
  const Index d_out = p.weight.dim(0), d_in = p.weight.dim(1);
  if (dout.size() != d_out || x_in.size() != d_in) throw ShapeError("fc_backward: shape mismatch");
  LayerGrads<Scalar> g;
  const Mat<Scalar> dcol = detail::as_column(dout);
  if (req.weight) {
    Mat<Scalar> dw = detail::weight_grad<Scalar>(dcol, detail::as_column(x_in));
    g.dweight = Tensor<Scalar>(p.weight.shape(), Eigen::Map<const Vec<Scalar>>(dw.data(), dw.size()));
    count_bwd(flops, 2 * d_out * d_in);
  }
  if (req.bias) {
    g.dbias = Tensor<Scalar>({d_out}, dout.vec());
    count_bwd(flops, d_out);
  }
  if (req.input) {
    Mat<Scalar> dx = p.weight_matrix().transpose() * dcol;
    g.dinput = Tensor<Scalar>(x_in.shape(), Eigen::Map<const Vec<Scalar>>(dx.data(), d_in));
    count_bwd(flops, 2 * d_out * d_in);
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2-D convolution, stride 1, square kernel, zero padding
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& x, const LayerParams<Scalar>& p, Index padding,
                              FlopCounter* flops = nullptr) {
  if (!p.is_conv()) throw ShapeError("conv2d_forward: FC weights");
  if (x.rank() != 3 || x.dim(0) != p.weight.dim(1)) {
    throw ShapeError("conv2d_forward: input " + shape_str(x.shape()) + " vs weight " + shape_str(p.weight.shape()));
  }
  const Index c_out = p.weight.dim(0), kernel = p.weight.dim(2);
  const Index oh = detail::conv_out_dim(x.dim(1), kernel, padding);
  const Index ow = detail::conv_out_dim(x.dim(2), kernel, padding);
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d_forward: output dimension <= 0");
  const Mat<Scalar> cols = detail::im2col(x, kernel, padding);
  Mat<Scalar> out = detail::affine<Scalar>(p.weight_matrix(), cols, p.bias.vec());
  count_fwd(flops, 2 * cols.rows() * c_out * cols.cols() + c_out * cols.cols());
  Tensor<Scalar> y({c_out, oh, ow}, Eigen::Map<const Vec<Scalar>>(out.data(), out.size()));
  ensure_finite(y, "conv2d_forward");
  return y;
}

template <typename Scalar>
LayerGrads<Scalar> conv2d_backward(const Tensor<Scalar>& dout, const Tensor<Scalar>& x_in, const LayerParams<Scalar>& p,
                                   Index padding, GradRequest req = {}, FlopCounter* flops = nullptr) {
  const Index c_out = p.weight.dim(0), kernel = p.weight.dim(2);
  if (x_in.rank() != 3 || x_in.dim(0) != p.weight.dim(1)) throw ShapeError("conv2d_backward: input shape mismatch");
  const Index oh = detail::conv_out_dim(x_in.dim(1), kernel, padding);
  const Index ow = detail::conv_out_dim(x_in.dim(2), kernel, padding);
  if (dout.shape() != Shape{c_out, oh, ow}) throw ShapeError("conv2d_backward: output gradient shape mismatch");
  const Index positions = oh * ow;
  const Index fan_in = p.fan_in();
  const Mat<Scalar> d = Eigen::Map<const Mat<Scalar>>(dout.data(), c_out, positions);

  LayerGrads<Scalar> g;
  if (req.weight) {
    Mat<Scalar> dw = detail::weight_grad<Scalar>(d, detail::im2col(x_in, kernel, padding));
    g.dweight = Tensor<Scalar>(p.weight.shape(), Eigen::Map<const Vec<Scalar>>(dw.data(), dw.size()));
    count_bwd(flops, 2 * c_out * fan_in * positions);
  }
  if (req.bias) {
    g.dbias = Tensor<Scalar>({c_out}, d.rowwise().sum());
    count_bwd(flops, c_out * positions);
  }
  if (req.input) {
    Mat<Scalar> dcols = p.weight_matrix().transpose() * d;
    g.dinput = detail::col2im(dcols, x_in.shape(), kernel, padding);
    count_bwd(flops, 2 * c_out * fan_in * positions);
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling
// ---------------------------------------------------------------------------

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> out;
  std::vector<std::int32_t> argmax;  // flat input index per output element
};

template <typename Scalar>
PoolResult<Scalar> maxpool2x2_forward(const Tensor<Scalar>& x, FlopCounter* flops = nullptr) {
  if (x.rank() != 3) throw ShapeError("maxpool2x2_forward: expected [c, h, w]");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("maxpool2x2_forward: odd spatial dims " + shape_str(x.shape()));
  ensure_finite(x, "maxpool2x2_forward input");
  const Index oh = h / 2, ow = w / 2;
  PoolResult<Scalar> r{Tensor<Scalar>({c, oh, ow}), std::vector<std::int32_t>(static_cast<std::size_t>(c * oh * ow))};
  for (Index ci = 0; ci < c; ++ci) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        const Index base = (ci * h + 2 * oy) * w + 2 * ox;
        // Row-major window order; strict '>' keeps the first of equal maxima.
        const Index cand[4] = {base, base + 1, base + w, base + w + 1};
        Index best = cand[0];
        for (int k = 1; k < 4; ++k) {
          if (x[cand[k]] > x[best]) best = cand[k];
        }
        const Index o = (ci * oh + oy) * ow + ox;
        r.out[o] = x[best];
        r.argmax[static_cast<std::size_t>(o)] = static_cast<std::int32_t>(best);
      }
    }
  }
  count_fwd(flops, 3 * c * oh * ow);
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2x2_backward(const Tensor<Scalar>& dy, const std::vector<std::int32_t>& argmax,
                                   const Shape& in_shape) {
  if (static_cast<std::size_t>(dy.size()) != argmax.size()) throw ShapeError("maxpool2x2_backward: mask size mismatch");
  Tensor<Scalar> dx(in_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] < 0 || argmax[i] >= dx.size()) throw ShapeError("maxpool2x2_backward: mask index out of range");
    dx[argmax[i]] += dy[static_cast<Index>(i)];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& x, FlopCounter* flops = nullptr) {
  ensure_finite(x, "relu_forward input");
  Tensor<Scalar> y(x.shape(), x.vec().cwiseMax(Scalar(0)));
  count_fwd(flops, x.size());
  return y;
}

// Derivative at exactly 0 is 0.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& dy, const Tensor<Scalar>& x_pre, FlopCounter* flops = nullptr) {
  if (dy.size() != x_pre.size()) throw ShapeError("relu_backward: shape mismatch");
  Vec<Scalar> dx = (x_pre.vec().array() > Scalar(0)).select(dy.vec(), Scalar(0));
  count_bwd(flops, dy.size());
  return Tensor<Scalar>(x_pre.shape(), std::move(dx));
}

// ---------------------------------------------------------------------------
// Softmax + cross-entropy
// ---------------------------------------------------------------------------

template <typename Scalar>
struct SoftmaxXent {
  Tensor<Scalar> probs;
  Scalar loss{};
  Tensor<Scalar> dlogits;
};

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  ensure_finite(logits, "softmax input");
  Vec<Scalar> e = (logits.vec().array() - logits.vec().maxCoeff()).exp();
  e /= e.sum();
  return Tensor<Scalar>(logits.shape(), std::move(e));
}

template <typename Scalar>
SoftmaxXent<Scalar> softmax_xent(const Tensor<Scalar>& logits, int label, FlopCounter* flops = nullptr) {
  const Index n = logits.size();
  if (n < 2) throw ShapeError("softmax_xent: need at least two classes");
  if (label < 0 || label >= n) throw ShapeError("softmax_xent: label " + std::to_string(label) + " out of range");
  ensure_finite(logits, "softmax_xent input");
  const Scalar mx = logits.vec().maxCoeff();
  const Vec<Scalar> shifted = logits.vec().array() - mx;
  const Vec<Scalar> e = shifted.array().exp();
  const Scalar sum = e.sum();
  SoftmaxXent<Scalar> r;
  r.probs = Tensor<Scalar>(logits.shape(), e / sum);
  r.loss = std::log(sum) - shifted[label];
  r.dlogits = r.probs;
  r.dlogits[label] -= Scalar(1);
  count_bwd(flops, n);
  return r;
}

// Index of the largest logit; ties go to the smallest index.
template <typename Scalar>
int argmax(const Tensor<Scalar>& logits) {
  Index best = 0;
  for (Index i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace instantft

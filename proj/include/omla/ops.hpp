#pragma once

#include <functional>
#include <span>
#include <vector>

#include "omla/tensor.hpp"

namespace omla {

// Differentiable tensor operations. Every function records a node on the tape
// of its recorded inputs (if any) and otherwise computes plain values.
//
// Binary elementwise operations accept three operand layouts: equal shapes, a
// one-element operand against any tensor, and a rank-1 per-channel vector [C]
// against an NCHW feature map with C channels. Anything else is a ShapeError.
//
// Non-differentiable points (abs at 0, relu at 0, clamp at its bounds) take
// the zero subgradient.

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <class T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <class T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
/// s - a
template <class T> Tensor<T> rsub_scalar(const Tensor<T>& a, T s);

template <class T> Tensor<T> pow(const Tensor<T>& a, double exponent);
template <class T> Tensor<T> abs(const Tensor<T>& a);
template <class T> Tensor<T> clamp(const Tensor<T>& a, double lo, double hi);
template <class T> Tensor<T> sigmoid(const Tensor<T>& a);
template <class T> Tensor<T> relu(const Tensor<T>& a);
template <class T> Tensor<T> sqrt(const Tensor<T>& a);
template <class T> Tensor<T> log(const Tensor<T>& a);

/// Scalar (rank-0) reductions.
template <class T> Tensor<T> sum(const Tensor<T>& a);
template <class T> Tensor<T> mean(const Tensor<T>& a);

template <class T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Copies `shape`-many elements of flat `a` starting at `offset`.
template <class T> Tensor<T> slice_flat(const Tensor<T>& a, std::size_t offset, Shape shape);

/// NCHW input, OIHW kernel, bias [O]. Symmetric zero padding.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride,
                 int pad);

/// Doubles H and W with bilinear interpolation (half-pixel centres, edge clamp).
template <class T> Tensor<T> upsample_bilinear2x(const Tensor<T>& input);

template <class T> Tensor<T> concat_channels(std::span<const Tensor<T>> inputs);
template <class T> Tensor<T> slice_channels(const Tensor<T>& input, int begin, int count);

/// gamma * (x - mean) / sqrt(var + eps) + beta per channel. The statistics
/// are constants; gradients flow to x, gamma and beta only.
template <class T>
Tensor<T> bn_normalize(const Tensor<T>& x, std::span<const double> mean, std::span<const double> var,
                       const Tensor<T>& gamma, const Tensor<T>& beta, double eps);

template <class T>
struct BatchNormResult {
  Tensor<T> output;
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // biased (divisor m)
};

/// Training-mode batch normalisation: normalises with the statistics of the
/// batch itself and differentiates through them.
template <class T>
BatchNormResult<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma,
                                    const Tensor<T>& beta, double eps);

/// Mean over each `window`×`window` neighbourhood, stride 1, no padding.
template <class T> Tensor<T> box_filter(const Tensor<T>& input, int window);

enum class WarpDirection {
  kRightToLeft,  // samples source at x - d
  kLeftToRight,  // samples source at x + d
};

/// Horizontal 1-D bilinear resampling of an NCHW source by an N1HW disparity
/// map. Sample positions are clamped to [0, W-1]; a clamped position passes
/// no gradient to the disparity.
template <class T>
Tensor<T> warp_horizontal(const Tensor<T>& source, const Tensor<T>& disparity,
                          WarpDirection direction);

template <class T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double h);

}  // namespace omla

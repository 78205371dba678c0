#include "omla/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace omla {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

template <class T>
using GradIn = std::span<std::vector<T>* const>;

// Either records on the tape shared by `inputs` or returns an unrecorded tensor.
template <class T>
Tensor<T> emit(Shape shape, std::vector<T> data, std::initializer_list<const Tensor<T>*> inputs,
               typename Tape<T>::BackwardFn backward) {
  Tape<T>* tape = common_tape<T>(inputs);
  if (tape == nullptr) return Tensor<T>(std::move(shape), std::move(data));
  std::vector<const Tensor<T>*> in(inputs);
  return tape->record(std::move(shape), std::move(data), in, std::move(backward));
}

void require_nchw(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + ": expected NCHW tensor, got " + shape_str(s));
}

// ---------------------------------------------------------------------------
// Broadcasting

enum class Layout { kFull, kScalar, kChannel };

struct Broadcast {
  Shape out;
  Layout a = Layout::kFull;
  Layout b = Layout::kFull;
  std::size_t plane = 1;     // H*W of the NCHW operand
  std::size_t channels = 1;  // C of the NCHW operand
};

Broadcast resolve_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast r;
  const std::size_t na = shape_numel(a);
  const std::size_t nb = shape_numel(b);
  auto channel_match = [](const Shape& map, const Shape& vec) {
    return map.size() == 4 && vec.size() == 1 && vec[0] == map[1];
  };
  if (a == b) {
    r.out = a;
  } else if (nb == 1) {
    r.out = a;
    r.b = Layout::kScalar;
  } else if (na == 1) {
    r.out = b;
    r.a = Layout::kScalar;
  } else if (channel_match(a, b)) {
    r.out = a;
    r.b = Layout::kChannel;
  } else if (channel_match(b, a)) {
    r.out = b;
    r.a = Layout::kChannel;
  } else {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
  }
  if (r.out.size() == 4) {
    r.channels = static_cast<std::size_t>(r.out[1]);
    r.plane = static_cast<std::size_t>(r.out[2]) * static_cast<std::size_t>(r.out[3]);
  }
  return r;
}

inline std::size_t map_index(Layout l, std::size_t i, const Broadcast& b) {
  switch (l) {
    case Layout::kFull: return i;
    case Layout::kScalar: return 0;
    case Layout::kChannel: return (i / b.plane) % b.channels;
  }
  return i;
}

// f(x, y) -> value; da(x, y, out) and db(x, y, out) -> partials.
template <class T, class F, class DA, class DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA da, DB db) {
  const Broadcast bc = resolve_broadcast(a.shape(), b.shape(), name);
  const std::size_t n = shape_numel(bc.out);
  std::vector<T> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(ad[map_index(bc.a, i, bc)], bd[map_index(bc.b, i, bc)]);
  }
  Tensor<T> av = a.detached();
  Tensor<T> bv = b.detached();
  return emit<T>(bc.out, std::move(out), {&a, &b},
                 [av, bv, bc, da, db](std::span<const T> g, GradIn<T> gin) {
                   const auto x = av.data();
                   const auto y = bv.data();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const std::size_t ia = map_index(bc.a, i, bc);
                     const std::size_t ib = map_index(bc.b, i, bc);
                     if (gin[0]) (*gin[0])[ia] += g[i] * da(x[ia], y[ib]);
                     if (gin[1]) (*gin[1])[ib] += g[i] * db(x[ia], y[ib]);
                   }
                 });
}

// f(x) -> value; df(x, y) -> derivative given input x and output y.
template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  const auto ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  Tensor<T> av = a.detached();
  if (!a.recorded()) return Tensor<T>(a.shape(), std::move(out));
  auto result = std::make_shared<std::vector<T>>(out);
  return emit<T>(a.shape(), std::move(out), {&a}, [av, result, df](std::span<const T> g, GradIn<T> gin) {
    const auto x = av.data();
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * df(x[i], (*result)[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1.0); },
      [](T, T) { return T(1.0); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1.0); },
      [](T, T) { return T(-1.0); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1.0) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1.0); });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> rsub_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return s - x; }, [](T, T) { return T(-1.0); });
}

template <class T>
Tensor<T> pow(const Tensor<T>& a, double p) {
  using std::pow;
  return unary(
      a, [p](T x) { return pow(x, p); },
      [p](T x, T) { return value_of(x) == 0.0 && p < 1.0 ? T(0.0) : T(p) * pow(x, p - 1.0); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) {
        using std::abs;
        return abs(x);
      },
      [](T x, T) {
        const double v = value_of(x);
        return T(v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
      });
}

template <class T>
Tensor<T> clamp(const Tensor<T>& a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  return unary(
      a,
      [lo, hi](T x) {
        const double v = value_of(x);
        return v < lo ? T(lo) : (v > hi ? T(hi) : x);
      },
      [lo, hi](T x, T) {
        const double v = value_of(x);
        return T(v > lo && v < hi ? 1.0 : 0.0);
      });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  using std::exp;
  return unary(
      a, [](T x) { return T(1.0) / (T(1.0) + exp(-x)); }, [](T, T y) { return y * (T(1.0) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return value_of(x) > 0.0 ? x : T(0.0); },
      [](T x, T) { return T(value_of(x) > 0.0 ? 1.0 : 0.0); });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) {
        using std::sqrt;
        return sqrt(x);
      },
      [](T, T y) { return value_of(y) == 0.0 ? T(0.0) : T(0.5) / y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  using std::log;
  return unary(a, [](T x) { return log(x); }, [](T x, T) { return T(1.0) / x; });
}

// ---------------------------------------------------------------------------
// Reductions and reshapes

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s(0.0);
  for (const T& v : a.data()) s += v;
  return emit<T>({}, {s}, {&a}, [](std::span<const T> g, GradIn<T> gin) {
    for (T& v : *gin[0]) v += g[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  T s(0.0);
  for (const T& v : a.data()) s += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  return emit<T>({}, {s * T(inv)}, {&a}, [inv](std::span<const T> g, GradIn<T> gin) {
    const T gi = g[0] * T(inv);
    for (T& v : *gin[0]) v += gi;
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return emit<T>(std::move(shape), std::move(out), {&a}, [](std::span<const T> g, GradIn<T> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
  });
}

template <class T>
Tensor<T> slice_flat(const Tensor<T>& a, std::size_t offset, Shape shape) {
  const std::size_t n = shape_numel(shape);
  if (offset + n > a.numel()) {
    throw ShapeError("slice_flat: range [" + std::to_string(offset) + "," +
                     std::to_string(offset + n) + ") exceeds length " + std::to_string(a.numel()));
  }
  const auto d = a.data();
  std::vector<T> out(d.begin() + static_cast<std::ptrdiff_t>(offset),
                     d.begin() + static_cast<std::ptrdiff_t>(offset + n));
  return emit<T>(std::move(shape), std::move(out), {&a},
                 [offset](std::span<const T> g, GradIn<T> gin) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[offset + i] += g[i];
                 });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

// Valid output range [lo, hi) along one axis for kernel tap k.
inline void tap_range(int k, int stride, int pad, int in_size, int out_size, int& lo, int& hi) {
  // in = o*stride - pad + k must lie in [0, in_size)
  int l = pad - k;
  lo = l <= 0 ? 0 : (l + stride - 1) / stride;
  int u = in_size - 1 + pad - k;  // o*stride <= u
  hi = u < 0 ? 0 : u / stride + 1;
  lo = std::min(lo, out_size);
  hi = std::min(hi, out_size);
  if (hi < lo) hi = lo;
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride,
                 int pad) {
  require_nchw(input.shape(), "conv2d input");
  require_nchw(kernel.shape(), "conv2d kernel");
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  if (kernel.dim(1) != C) {
    throw ShapeError("conv2d: input has " + std::to_string(C) + " channels, kernel expects " +
                     std::to_string(kernel.dim(1)));
  }
  if (bias.shape() != Shape{O}) throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  if (H + 2 * pad - KH < 0 || W + 2 * pad - KW < 0 || OH <= 0 || OW <= 0) {
    throw ShapeError("conv2d: non-positive output size for input " + shape_str(input.shape()) +
                     " and kernel " + shape_str(kernel.shape()));
  }

  const std::size_t in_plane = static_cast<std::size_t>(H) * W;
  const std::size_t out_plane = static_cast<std::size_t>(OH) * OW;
  std::vector<T> out(static_cast<std::size_t>(N) * O * out_plane);
  const T* x = input.data().data();
  const T* w = kernel.data().data();
  const T* b = bias.data().data();

  std::vector<std::array<int, 2>> rows(static_cast<std::size_t>(KH)), cols(static_cast<std::size_t>(KW));
  for (int k = 0; k < KH; ++k) tap_range(k, stride, pad, H, OH, rows[k][0], rows[k][1]);
  for (int k = 0; k < KW; ++k) tap_range(k, stride, pad, W, OW, cols[k][0], cols[k][1]);

  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      T* op = out.data() + (static_cast<std::size_t>(n) * O + o) * out_plane;
      std::fill(op, op + out_plane, b[o]);
      for (int c = 0; c < C; ++c) {
        const T* ip = x + (static_cast<std::size_t>(n) * C + c) * in_plane;
        const T* wp = w + (static_cast<std::size_t>(o) * C + c) * KH * KW;
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const T wv = wp[kh * KW + kw];
            const int c0 = cols[kw][0], c1 = cols[kw][1];
            for (int oh = rows[kh][0]; oh < rows[kh][1]; ++oh) {
              const T* irow = ip + static_cast<std::size_t>(oh * stride - pad + kh) * W;
              T* orow = op + static_cast<std::size_t>(oh) * OW;
              const int ioff = kw - pad;
              if (stride == 1) {
                for (int ow = c0; ow < c1; ++ow) orow[ow] += wv * irow[ow + ioff];
              } else {
                for (int ow = c0; ow < c1; ++ow) orow[ow] += wv * irow[ow * stride + ioff];
              }
            }
          }
        }
      }
    }
  }

  Tensor<T> in_v = input.detached();
  Tensor<T> k_v = kernel.detached();
  return emit<T>(
      {N, O, OH, OW}, std::move(out), {&input, &kernel, &bias},
      [in_v, k_v, N, C, H, W, O, KH, KW, OH, OW, stride, pad, rows, cols](std::span<const T> g,
                                                                           GradIn<T> gin) {
        const T* x = in_v.data().data();
        const T* w = k_v.data().data();
        const std::size_t in_plane = static_cast<std::size_t>(H) * W;
        const std::size_t out_plane = static_cast<std::size_t>(OH) * OW;
        T* gx = gin[0] ? gin[0]->data() : nullptr;
        T* gw = gin[1] ? gin[1]->data() : nullptr;
        T* gb = gin[2] ? gin[2]->data() : nullptr;
        for (int n = 0; n < N; ++n) {
          for (int o = 0; o < O; ++o) {
            const T* gp = g.data() + (static_cast<std::size_t>(n) * O + o) * out_plane;
            if (gb) {
              T s(0.0);
              for (std::size_t i = 0; i < out_plane; ++i) s += gp[i];
              gb[o] += s;
            }
            if (!gx && !gw) continue;
            for (int c = 0; c < C; ++c) {
              const std::size_t in_off = (static_cast<std::size_t>(n) * C + c) * in_plane;
              const std::size_t w_off = (static_cast<std::size_t>(o) * C + c) * KH * KW;
              for (int kh = 0; kh < KH; ++kh) {
                for (int kw = 0; kw < KW; ++kw) {
                  const T wv = w[w_off + kh * KW + kw];
                  T acc(0.0);
                  const int c0 = cols[kw][0], c1 = cols[kw][1];
                  const int ioff = kw - pad;
                  for (int oh = rows[kh][0]; oh < rows[kh][1]; ++oh) {
                    const std::size_t irow = in_off + static_cast<std::size_t>(oh * stride - pad + kh) * W;
                    const T* grow = gp + static_cast<std::size_t>(oh) * OW;
                    for (int ow = c0; ow < c1; ++ow) {
                      const std::size_t ii = irow + static_cast<std::size_t>(ow * stride + ioff);
                      if (gw) acc += grow[ow] * x[ii];
                      if (gx) gx[ii] += grow[ow] * wv;
                    }
                  }
                  if (gw) gw[w_off + kh * KW + kw] += acc;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Upsampling

namespace {

struct Interp {
  int i0, i1;
  double w1;  // weight of i1
};

std::vector<Interp> upsample_table(int in_size) {
  std::vector<Interp> t(static_cast<std::size_t>(2 * in_size));
  for (int o = 0; o < 2 * in_size; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in_size - 1) i0 = in_size - 1;
    const int i1 = std::min(i0 + 1, in_size - 1);
    t[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
  }
  return t;
}

}  // namespace

template <class T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& input) {
  require_nchw(input.shape(), "upsample_bilinear2x");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H < 1 || W < 1) throw ShapeError("upsample_bilinear2x: empty spatial size");
  const int OH = 2 * H, OW = 2 * W;
  const auto ty = upsample_table(H);
  const auto tx = upsample_table(W);
  std::vector<T> out(static_cast<std::size_t>(N) * C * OH * OW);
  const T* x = input.data().data();
  for (int p = 0; p < N * C; ++p) {
    const T* ip = x + static_cast<std::size_t>(p) * H * W;
    T* op = out.data() + static_cast<std::size_t>(p) * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      const Interp& iy = ty[static_cast<std::size_t>(oy)];
      const T* r0 = ip + static_cast<std::size_t>(iy.i0) * W;
      const T* r1 = ip + static_cast<std::size_t>(iy.i1) * W;
      for (int ox = 0; ox < OW; ++ox) {
        const Interp& ix = tx[static_cast<std::size_t>(ox)];
        const T top = r0[ix.i0] * T(1.0 - ix.w1) + r0[ix.i1] * T(ix.w1);
        const T bot = r1[ix.i0] * T(1.0 - ix.w1) + r1[ix.i1] * T(ix.w1);
        op[static_cast<std::size_t>(oy) * OW + ox] = top * T(1.0 - iy.w1) + bot * T(iy.w1);
      }
    }
  }
  return emit<T>({N, C, OH, OW}, std::move(out), {&input},
                 [N, C, H, W, ty, tx](std::span<const T> g, GradIn<T> gin) {
                   const int OH = 2 * H, OW = 2 * W;
                   T* gx = gin[0]->data();
                   for (int p = 0; p < N * C; ++p) {
                     T* gp = gx + static_cast<std::size_t>(p) * H * W;
                     const T* go = g.data() + static_cast<std::size_t>(p) * OH * OW;
                     for (int oy = 0; oy < OH; ++oy) {
                       const Interp& iy = ty[static_cast<std::size_t>(oy)];
                       for (int ox = 0; ox < OW; ++ox) {
                         const Interp& ix = tx[static_cast<std::size_t>(ox)];
                         const T v = go[static_cast<std::size_t>(oy) * OW + ox];
                         const T vt = v * T(1.0 - iy.w1);
                         const T vb = v * T(iy.w1);
                         gp[static_cast<std::size_t>(iy.i0) * W + ix.i0] += vt * T(1.0 - ix.w1);
                         gp[static_cast<std::size_t>(iy.i0) * W + ix.i1] += vt * T(ix.w1);
                         gp[static_cast<std::size_t>(iy.i1) * W + ix.i0] += vb * T(1.0 - ix.w1);
                         gp[static_cast<std::size_t>(iy.i1) * W + ix.i1] += vb * T(ix.w1);
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Channel concat / slice

template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>> inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& t : inputs) require_nchw(t.shape(), "concat_channels");
  const int N = inputs[0].dim(0), H = inputs[0].dim(2), W = inputs[0].dim(3);
  int C = 0;
  std::vector<int> offsets;
  for (const auto& t : inputs) {
    if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W) {
      throw ShapeError("concat_channels: mismatched shapes " + shape_str(inputs[0].shape()) +
                       " and " + shape_str(t.shape()));
    }
    offsets.push_back(C);
    C += t.dim(1);
  }
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> out(static_cast<std::size_t>(N) * C * plane);
  std::vector<int> chans;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const int ck = inputs[k].dim(1);
    chans.push_back(ck);
    const T* src = inputs[k].data().data();
    for (int n = 0; n < N; ++n) {
      std::copy(src + static_cast<std::size_t>(n) * ck * plane,
                src + static_cast<std::size_t>(n + 1) * ck * plane,
                out.data() + (static_cast<std::size_t>(n) * C + offsets[k]) * plane);
    }
  }
  Tape<T>* tape = nullptr;
  for (const auto& t : inputs) {
    if (!t.recorded()) continue;
    if (tape && tape != t.tape()) throw ContractError("operation mixes tensors from different tapes");
    tape = t.tape();
  }
  if (!tape) return Tensor<T>({N, C, H, W}, std::move(out));
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& t : inputs) ptrs.push_back(&t);
  return tape->record({N, C, H, W}, std::move(out), ptrs,
                      [N, C, plane, offsets, chans](std::span<const T> g, GradIn<T> gin) {
                        for (std::size_t k = 0; k < gin.size(); ++k) {
                          if (!gin[k]) continue;
                          const int ck = chans[k];
                          for (int n = 0; n < N; ++n) {
                            const T* src = g.data() + (static_cast<std::size_t>(n) * C + offsets[k]) * plane;
                            T* dst = gin[k]->data() + static_cast<std::size_t>(n) * ck * plane;
                            for (std::size_t i = 0; i < ck * plane; ++i) dst[i] += src[i];
                          }
                        }
                      });
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& input, int begin, int count) {
  require_nchw(input.shape(), "slice_channels");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (begin < 0 || count < 1 || begin + count > C) {
    throw ShapeError("slice_channels: range out of bounds for " + shape_str(input.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> out(static_cast<std::size_t>(N) * count * plane);
  const T* x = input.data().data();
  for (int n = 0; n < N; ++n) {
    std::copy(x + (static_cast<std::size_t>(n) * C + begin) * plane,
              x + (static_cast<std::size_t>(n) * C + begin + count) * plane,
              out.data() + static_cast<std::size_t>(n) * count * plane);
  }
  return emit<T>({N, count, H, W}, std::move(out), {&input},
                 [N, C, begin, count, plane](std::span<const T> g, GradIn<T> gin) {
                   for (int n = 0; n < N; ++n) {
                     const T* src = g.data() + static_cast<std::size_t>(n) * count * plane;
                     T* dst = gin[0]->data() + (static_cast<std::size_t>(n) * C + begin) * plane;
                     for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
                   }
                 });
}

// ---------------------------------------------------------------------------
// Batch normalisation

template <class T>
Tensor<T> bn_normalize(const Tensor<T>& x, std::span<const double> mean, std::span<const double> var,
                       const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  require_nchw(x.shape(), "bn_normalize");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (mean.size() != static_cast<std::size_t>(C) || var.size() != static_cast<std::size_t>(C) ||
      gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw ShapeError("bn_normalize: channel count mismatch for input " + shape_str(x.shape()));
  }
  std::vector<double> inv(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(var[c] + eps);
  std::vector<double> mu(mean.begin(), mean.end());
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
      const T scale = gd[c] * T(inv[c]);
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = (xd[off + i] - T(mu[c])) * scale + bd[c];
    }
  }
  Tensor<T> xv = x.detached();
  Tensor<T> gv = gamma.detached();
  return emit<T>(x.shape(), std::move(out), {&x, &gamma, &beta},
                 [xv, gv, mu, inv, N, C, plane](std::span<const T> g, GradIn<T> gin) {
                   const T* xd = xv.data().data();
                   const T* gd = gv.data().data();
                   for (int n = 0; n < N; ++n) {
                     for (int c = 0; c < C; ++c) {
                       const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                       T sg(0.0), sgx(0.0);
                       const T scale = gd[c] * T(inv[c]);
                       for (std::size_t i = 0; i < plane; ++i) {
                         const T gi = g[off + i];
                         if (gin[0]) (*gin[0])[off + i] += gi * scale;
                         sg += gi;
                         sgx += gi * (xd[off + i] - T(mu[c]));
                       }
                       if (gin[1]) (*gin[1])[c] += sgx * T(inv[c]);
                       if (gin[2]) (*gin[2])[c] += sg;
                     }
                   }
                 });
}

template <class T>
BatchNormResult<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma,
                                    const Tensor<T>& beta, double eps) {
  require_nchw(x.shape(), "batch_norm_train");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw ShapeError("batch_norm_train: channel count mismatch for input " + shape_str(x.shape()));
  }
  const std::size_t m = static_cast<std::size_t>(N) * plane;
  if (m < 2) throw ContractError("batch_norm_train: fewer than 2 samples per channel");
  const T* xd = x.data().data();
  std::vector<T> mu(static_cast<std::size_t>(C), T(0.0)), inv(static_cast<std::size_t>(C));
  BatchNormResult<T> res;
  res.batch_mean.resize(static_cast<std::size_t>(C));
  res.batch_var.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    T s(0.0);
    for (int n = 0; n < N; ++n) {
      const T* p = xd + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
    }
    mu[c] = s / T(static_cast<double>(m));
    T v(0.0);
    for (int n = 0; n < N; ++n) {
      const T* p = xd + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mu[c]) * (p[i] - mu[c]);
    }
    v = v / T(static_cast<double>(m));
    using std::sqrt;
    inv[c] = T(1.0) / sqrt(v + T(eps));
    res.batch_mean[c] = value_of(mu[c]);
    res.batch_var[c] = value_of(v);
  }
  std::vector<T> xhat(x.numel()), out(x.numel());
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[off + i] = (xd[off + i] - mu[c]) * inv[c];
        out[off + i] = gd[c] * xhat[off + i] + bd[c];
      }
    }
  }
  Tensor<T> gv = gamma.detached();
  auto xh = std::make_shared<const std::vector<T>>(std::move(xhat));
  res.output = emit<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [gv, xh, inv, N, C, plane, m](std::span<const T> g, GradIn<T> gin) {
        const T* gd = gv.data().data();
        const std::vector<T>& xhat = *xh;
        for (int c = 0; c < C; ++c) {
          T sg(0.0), sgx(0.0);
          for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sg += g[off + i];
              sgx += g[off + i] * xhat[off + i];
            }
          }
          if (gin[1]) (*gin[1])[c] += sgx;
          if (gin[2]) (*gin[2])[c] += sg;
          if (!gin[0]) continue;
          // dx = gamma*inv/m * (m*g - sum(g) - xhat*sum(g*xhat))
          const T k = gd[c] * inv[c] / T(static_cast<double>(m));
          for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              (*gin[0])[off + i] +=
                  k * (T(static_cast<double>(m)) * g[off + i] - sg - xhat[off + i] * sgx);
            }
          }
        }
      });
  return res;
}

// ---------------------------------------------------------------------------
// Box filter

template <class T>
Tensor<T> box_filter(const Tensor<T>& input, int window) {
  require_nchw(input.shape(), "box_filter");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (window < 1 || window > H || window > W) {
    throw ShapeError("box_filter: window " + std::to_string(window) + " does not fit " +
                     shape_str(input.shape()));
  }
  const int OH = H - window + 1, OW = W - window + 1;
  const double inv = 1.0 / (static_cast<double>(window) * window);
  std::vector<T> out(static_cast<std::size_t>(N) * C * OH * OW);
  const T* x = input.data().data();
  for (int p = 0; p < N * C; ++p) {
    const T* ip = x + static_cast<std::size_t>(p) * H * W;
    T* op = out.data() + static_cast<std::size_t>(p) * OH * OW;
    for (int y = 0; y < OH; ++y) {
      for (int xo = 0; xo < OW; ++xo) {
        T s(0.0);
        for (int i = 0; i < window; ++i) {
          const T* row = ip + static_cast<std::size_t>(y + i) * W + xo;
          for (int j = 0; j < window; ++j) s += row[j];
        }
        op[static_cast<std::size_t>(y) * OW + xo] = s * T(inv);
      }
    }
  }
  return emit<T>({N, C, OH, OW}, std::move(out), {&input},
                 [N, C, H, W, OH, OW, window, inv](std::span<const T> g, GradIn<T> gin) {
                   for (int p = 0; p < N * C; ++p) {
                     T* gp = gin[0]->data() + static_cast<std::size_t>(p) * H * W;
                     const T* go = g.data() + static_cast<std::size_t>(p) * OH * OW;
                     for (int y = 0; y < OH; ++y) {
                       for (int xo = 0; xo < OW; ++xo) {
                         const T v = go[static_cast<std::size_t>(y) * OW + xo] * T(inv);
                         for (int i = 0; i < window; ++i) {
                           T* row = gp + static_cast<std::size_t>(y + i) * W + xo;
                           for (int j = 0; j < window; ++j) row[j] += v;
                         }
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Horizontal warp

template <class T>
Tensor<T> warp_horizontal(const Tensor<T>& source, const Tensor<T>& disparity,
                          WarpDirection direction) {
  require_nchw(source.shape(), "warp source");
  require_nchw(disparity.shape(), "warp disparity");
  const int N = source.dim(0), C = source.dim(1), H = source.dim(2), W = source.dim(3);
  if (disparity.dim(0) != N || disparity.dim(1) != 1 || disparity.dim(2) != H ||
      disparity.dim(3) != W) {
    throw ShapeError("warp: disparity " + shape_str(disparity.shape()) + " does not match source " +
                     shape_str(source.shape()));
  }
  const double sign = direction == WarpDirection::kRightToLeft ? -1.0 : 1.0;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const T* s = source.data().data();
  const T* d = disparity.data().data();

  // Per-pixel sample position; shared by all channels.
  struct Sample {
    int x0, x1;
    bool clamped;
  };
  std::vector<Sample> samples(static_cast<std::size_t>(N) * plane);
  std::vector<T> frac(static_cast<std::size_t>(N) * plane);
  for (int n = 0; n < N; ++n) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t pi = static_cast<std::size_t>(n) * plane + static_cast<std::size_t>(y) * W + x;
        T pos = T(static_cast<double>(x)) + T(sign) * d[pi];
        const double pv = value_of(pos);
        bool clamped = false;
        if (pv < 0.0) {
          pos = T(0.0);
          clamped = true;
        } else if (pv > W - 1) {
          pos = T(static_cast<double>(W - 1));
          clamped = true;
        }
        int x0 = static_cast<int>(std::floor(value_of(pos)));
        if (x0 > W - 1) x0 = W - 1;
        const int x1 = std::min(x0 + 1, W - 1);
        samples[pi] = {x0, x1, clamped};
        frac[pi] = pos - T(static_cast<double>(x0));
      }
    }
  }
  std::vector<T> out(source.numel());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* sp = s + (static_cast<std::size_t>(n) * C + c) * plane;
      T* op = out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (int y = 0; y < H; ++y) {
        const T* row = sp + static_cast<std::size_t>(y) * W;
        for (int x = 0; x < W; ++x) {
          const std::size_t pi = static_cast<std::size_t>(n) * plane + static_cast<std::size_t>(y) * W + x;
          const Sample& sm = samples[pi];
          const T w1 = frac[pi];
          op[static_cast<std::size_t>(y) * W + x] = row[sm.x0] * (T(1.0) - w1) + row[sm.x1] * w1;
        }
      }
    }
  }
  Tensor<T> sv = source.detached();
  auto shared_samples = std::make_shared<const std::vector<Sample>>(std::move(samples));
  auto shared_frac = std::make_shared<const std::vector<T>>(std::move(frac));
  return emit<T>(
      source.shape(), std::move(out), {&source, &disparity},
      [sv, shared_samples, shared_frac, N, C, H, W, plane, sign](std::span<const T> g, GradIn<T> gin) {
        const T* s = sv.data().data();
        const auto& samples = *shared_samples;
        const auto& frac = *shared_frac;
        for (int n = 0; n < N; ++n) {
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            for (int y = 0; y < H; ++y) {
              const std::size_t roff = off + static_cast<std::size_t>(y) * W;
              for (int x = 0; x < W; ++x) {
                const std::size_t pi =
                    static_cast<std::size_t>(n) * plane + static_cast<std::size_t>(y) * W + x;
                const Sample& sm = samples[pi];
                const T gi = g[roff + x];
                const T w1 = frac[pi];
                if (gin[0]) {
                  (*gin[0])[roff + sm.x0] += gi * (T(1.0) - w1);
                  (*gin[0])[roff + sm.x1] += gi * w1;
                }
                if (gin[1] && !sm.clamped) {
                  (*gin[1])[pi] += gi * T(sign) * (s[roff + sm.x1] - s[roff + sm.x0]);
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: h must be positive");
  std::vector<double> base(x.data().begin(), x.data().end());
  std::vector<double> g(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor<double>(x.shape(), std::move(plus)));
    const double fm = f(Tensor<double>(x.shape(), std::move(minus)));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor<double>(x.shape(), std::move(g));
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define OMLA_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> rsub_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> pow(const Tensor<T>&, double);                                               \
  template Tensor<T> abs(const Tensor<T>&);                                                       \
  template Tensor<T> clamp(const Tensor<T>&, double, double);                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> sqrt(const Tensor<T>&);                                                      \
  template Tensor<T> log(const Tensor<T>&);                                                       \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> slice_flat(const Tensor<T>&, std::size_t, Shape);                            \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);      \
  template Tensor<T> upsample_bilinear2x(const Tensor<T>&);                                       \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                                 \
  template Tensor<T> slice_channels(const Tensor<T>&, int, int);                                  \
  template Tensor<T> bn_normalize(const Tensor<T>&, std::span<const double>,                      \
                                  std::span<const double>, const Tensor<T>&, const Tensor<T>&,    \
                                  double);                                                        \
  template BatchNormResult<T> batch_norm_train(const Tensor<T>&, const Tensor<T>&,                \
                                               const Tensor<T>&, double);                         \
  template Tensor<T> box_filter(const Tensor<T>&, int);                                           \
  template Tensor<T> warp_horizontal(const Tensor<T>&, const Tensor<T>&, WarpDirection);

OMLA_INSTANTIATE_OPS(double)
OMLA_INSTANTIATE_OPS(Dual)

}  // namespace omla

// Copyright 2026 The cmtl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Differentiable building blocks of the network. Every forward routine has a
// matching backward routine that accumulates parameter gradients (+=) and
// returns or overwrites the input gradient.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "cmtl/errors.hpp"
#include "cmtl/tensor.hpp"

namespace cmtl::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

struct Window {
  int kernel;
  int stride;
  int pad;

  int out_extent(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

/// Unfolds (C, H, W) into a (C*k*k) x (OH*OW) patch matrix.
template <typename T>
void im2col(const T* x, int channels, int height, int width, Window win, T* cols) {
  const int oh = win.out_extent(height), ow = win.out_extent(width);
  const int k = win.kernel;
  for (int c = 0; c < channels; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * win.stride - win.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * width;
          if (win.stride == 1) {
            const int shift = kx - win.pad;
            const int lo = std::max(0, -shift), hi = std::min(ow, width - shift);
            std::fill(dst, dst + std::max(0, std::min(lo, ow)), T(0));
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox + shift];
            std::fill(dst + std::max(lo, hi), dst + ow, T(0));
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * win.stride - win.pad + kx;
              dst[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-adds the patch matrix back into (C, H, W).
template <typename T>
void col2im(const T* cols, int channels, int height, int width, Window win, T* x) {
  const int oh = win.out_extent(height), ow = win.out_extent(width);
  const int k = win.kernel;
  for (int c = 0; c < channels; ++c) {
    T* plane = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * win.stride - win.pad + ky;
          if (iy < 0 || iy >= height) continue;
          const T* src = row + static_cast<std::size_t>(oy) * ow;
          T* dst = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * win.stride - win.pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

/// Parameter pointers of one layer inside the flat parameter (or gradient)
/// buffer. `slope` is null for layers without a PReLU.
template <typename T>
struct LayerParams {
  T* weight = nullptr;
  T* bias = nullptr;
  T* slope = nullptr;
};

// ---------------------------------------------------------------------------
// Convolution, stride 1, zero "same" padding, odd square kernel.
// weight: (out, in, k, k).

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const T* weight, const T* bias, int out_channels,
                       int kernel, Buffer<T>& scratch) {
  const Window win{kernel, 1, kernel / 2};
  const int k2 = x.channels * kernel * kernel;
  const int hw = x.plane();
  Tensor<T> y(out_channels, x.height, x.width);
  MatrixMap<T> out(y.data.data(), out_channels, hw);
  ConstMatrixMap<T> w(weight, out_channels, k2);
  if (kernel == 1) {
    out.noalias() = w * ConstMatrixMap<T>(x.data.data(), x.channels, hw);
  } else {
    scratch.resize(static_cast<std::size_t>(k2) * hw);
    im2col(x.data.data(), x.channels, x.height, x.width, win, scratch.data());
    out.noalias() = w * ConstMatrixMap<T>(scratch.data(), k2, hw);
  }
  for (int c = 0; c < out_channels; ++c) out.row(c).array() += bias[c];
  return y;
}

/// Returns dL/dx; accumulates dL/dweight and dL/dbias.
template <typename T>
Tensor<T> conv_backward(const Tensor<T>& x, const Tensor<T>& dy, const T* weight, T* dweight,
                        T* dbias, int kernel, Buffer<T>& scratch, bool need_dx = true) {
  const Window win{kernel, 1, kernel / 2};
  const int k2 = x.channels * kernel * kernel;
  const int hw = x.plane();
  ConstMatrixMap<T> gy(dy.data.data(), dy.channels, hw);
  ConstMatrixMap<T> w(weight, dy.channels, k2);
  MatrixMap<T> gw(dweight, dy.channels, k2);
  for (int c = 0; c < dy.channels; ++c) dbias[c] += gy.row(c).sum();

  Tensor<T> dx;
  if (kernel == 1) {
    ConstMatrixMap<T> cols(x.data.data(), k2, hw);
    gw.noalias() += gy * cols.transpose();
    if (need_dx) {
      dx = Tensor<T>(x.channels, x.height, x.width);
      MatrixMap<T>(dx.data.data(), k2, hw).noalias() = w.transpose() * gy;
    }
    return dx;
  }
  scratch.resize(static_cast<std::size_t>(k2) * hw);
  im2col(x.data.data(), x.channels, x.height, x.width, win, scratch.data());
  gw.noalias() += gy * ConstMatrixMap<T>(scratch.data(), k2, hw).transpose();
  if (need_dx) {
    MatrixMap<T> dcols(scratch.data(), k2, hw);
    dcols.noalias() = w.transpose() * gy;
    dx = Tensor<T>(x.channels, x.height, x.width);
    col2im(scratch.data(), x.channels, x.height, x.width, win, dx.data.data());
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Fractionally strided (transposed) convolution: 4x4 kernel, stride 2,
// padding 1, exactly doubling both spatial dims. weight: (in, out, 4, 4).

inline constexpr Window kUpsampleWindow{4, 2, 1};

template <typename T>
Tensor<T> upconv_forward(const Tensor<T>& x, const T* weight, const T* bias, int out_channels,
                         Buffer<T>& scratch) {
  const int kk = kUpsampleWindow.kernel * kUpsampleWindow.kernel;
  const int hw = x.plane();
  const int rows = out_channels * kk;
  scratch.resize(static_cast<std::size_t>(rows) * hw);
  MatrixMap<T> cols(scratch.data(), rows, hw);
  cols.noalias() = ConstMatrixMap<T>(weight, x.channels, rows).transpose() *
                   ConstMatrixMap<T>(x.data.data(), x.channels, hw);
  Tensor<T> y(out_channels, 2 * x.height, 2 * x.width);
  col2im(scratch.data(), out_channels, y.height, y.width, kUpsampleWindow, y.data.data());
  for (int c = 0; c < out_channels; ++c) {
    T* p = y.channel(c);
    for (int i = 0; i < y.plane(); ++i) p[i] += bias[c];
  }
  return y;
}

template <typename T>
Tensor<T> upconv_backward(const Tensor<T>& x, const Tensor<T>& dy, const T* weight, T* dweight,
                          T* dbias, Buffer<T>& scratch) {
  const int kk = kUpsampleWindow.kernel * kUpsampleWindow.kernel;
  const int hw = x.plane();
  const int rows = dy.channels * kk;
  for (int c = 0; c < dy.channels; ++c) {
    const T* p = dy.channel(c);
    T s = 0;
    for (int i = 0; i < dy.plane(); ++i) s += p[i];
    dbias[c] += s;
  }
  scratch.resize(static_cast<std::size_t>(rows) * hw);
  im2col(dy.data.data(), dy.channels, dy.height, dy.width, kUpsampleWindow, scratch.data());
  ConstMatrixMap<T> dcols(scratch.data(), rows, hw);
  ConstMatrixMap<T> xm(x.data.data(), x.channels, hw);
  MatrixMap<T>(dweight, x.channels, rows).noalias() += xm * dcols.transpose();
  Tensor<T> dx(x.channels, x.height, x.width);
  MatrixMap<T>(dx.data.data(), x.channels, hw).noalias() =
      ConstMatrixMap<T>(weight, x.channels, rows) * dcols;
  return dx;
}

// ---------------------------------------------------------------------------
// PReLU with one learnable slope per layer.

template <typename T>
void prelu_forward(std::span<T> v, T slope) {
  for (auto& e : v)
    if (e < T(0)) e *= slope;
}

/// `pre` holds the pre-activation values. Rewrites `grad` in place and
/// accumulates the slope gradient.
template <typename T>
void prelu_backward(std::span<const T> pre, std::span<T> grad, T slope, T* dslope) {
  T ds = 0;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    if (pre[i] < T(0)) {
      ds += grad[i] * pre[i];
      grad[i] *= slope;
    }
  }
  *dslope += ds;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Odd trailing rows/cols are dropped.

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, std::vector<int>& argmax) {
  Tensor<T> y(x.channels, x.height / 2, x.width / 2);
  argmax.resize(y.size());
  std::size_t o = 0;
  for (int c = 0; c < x.channels; ++c) {
    const T* plane = x.channel(c);
    const int base = c * x.plane();
    for (int oy = 0; oy < y.height; ++oy) {
      for (int ox = 0; ox < y.width; ++ox, ++o) {
        int best = (2 * oy) * x.width + 2 * ox;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int i = (2 * oy + dy) * x.width + 2 * ox + dx;
            if (plane[i] > plane[best]) best = i;
          }
        y.data[o] = plane[best];
        argmax[o] = base + best;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& dy, const std::vector<int>& argmax, int channels,
                           int height, int width) {
  Tensor<T> dx(channels, height, width);
  for (std::size_t o = 0; o < dy.size(); ++o) dx.data[argmax[o]] += dy.data[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Spatial pyramid pooling. Level n splits the map into an n x n grid whose
// cell (a, b) covers rows [floor(a h / n), ceil((a + 1) h / n)) and likewise
// for columns; each cell is max-pooled. Output is level-major, then channel,
// then cell in row-major order: length C * sum(n^2).

inline std::size_t spp_length(int channels, std::span<const int> levels) {
  std::size_t bins = 0;
  for (int n : levels) bins += static_cast<std::size_t>(n) * n;
  return static_cast<std::size_t>(channels) * bins;
}

template <typename T>
Buffer<T> spp_forward(const Tensor<T>& x, std::span<const int> levels,
                           std::vector<int>* argmax = nullptr) {
  for (int n : levels) {
    if (n < 1) throw InputError("pyramid levels must be positive");
    if (x.height < n || x.width < n) {
      throw InputError("feature map " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                       " is smaller than the " + std::to_string(n) + "x" + std::to_string(n) +
                       " pyramid grid");
    }
  }
  Buffer<T> out(spp_length(x.channels, levels));
  if (argmax) argmax->resize(out.size());
  std::size_t o = 0;
  for (int n : levels) {
    for (int c = 0; c < x.channels; ++c) {
      const T* plane = x.channel(c);
      for (int a = 0; a < n; ++a) {
        const int y0 = a * x.height / n;
        const int y1 = ((a + 1) * x.height + n - 1) / n;
        for (int b = 0; b < n; ++b, ++o) {
          const int x0 = b * x.width / n;
          const int x1 = ((b + 1) * x.width + n - 1) / n;
          int best = y0 * x.width + x0;
          for (int yy = y0; yy < y1; ++yy)
            for (int xx = x0; xx < x1; ++xx) {
              const int i = yy * x.width + xx;
              if (plane[i] > plane[best]) best = i;
            }
          out[o] = plane[best];
          if (argmax) (*argmax)[o] = c * x.plane() + best;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> spp_backward(std::span<const T> dout, const std::vector<int>& argmax, int channels,
                       int height, int width) {
  Tensor<T> dx(channels, height, width);
  for (std::size_t o = 0; o < dout.size(); ++o) dx.data[argmax[o]] += dout[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Fully connected: y = W x + b, W is (out, in).

template <typename T>
Buffer<T> linear_forward(std::span<const T> x, const T* weight, const T* bias, int out) {
  Buffer<T> y(static_cast<std::size_t>(out));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> ym(y.data(), out);
  ym.noalias() = ConstMatrixMap<T>(weight, out, static_cast<int>(x.size())) *
                 Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(x.data(), x.size());
  for (int i = 0; i < out; ++i) y[i] += bias[i];
  return y;
}

template <typename T>
Buffer<T> linear_backward(std::span<const T> x, std::span<const T> dy, const T* weight,
                               T* dweight, T* dbias) {
  const int in = static_cast<int>(x.size()), out = static_cast<int>(dy.size());
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x.data(), in), gv(dy.data(), out);
  MatrixMap<T>(dweight, out, in).noalias() += gv * xv.transpose();
  for (int i = 0; i < out; ++i) dbias[i] += dy[i];
  Buffer<T> dx(static_cast<std::size_t>(in));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(dx.data(), in).noalias() =
      ConstMatrixMap<T>(weight, out, in).transpose() * gv;
  return dx;
}

template <typename T>
Buffer<T> softmax(std::span<const T> scores) {
  Buffer<T> p(scores.size());
  if (scores.empty()) return p;
  const T m = *std::max_element(scores.begin(), scores.end());
  T s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(scores[i] - m);
  for (auto& v : p) v /= s;
  return p;
}

/// Stacks b's channels after a's. Spatial dims must agree.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.height != b.height || a.width != b.width)
    throw ContractError("cannot concatenate feature maps of different spatial size");
  Tensor<T> out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

}  // namespace cmtl::nn

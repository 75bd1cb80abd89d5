#pragma once

// Linear-map primitives shared by the forward pass, backpropagation and
// interval propagation. All loops run in a fixed order so results are
// bit-reproducible; every function accumulates into its output.

#include <algorithm>
#include <cstddef>

#include "prood/layers.hpp"
#include "prood/tensor.hpp"

namespace prood::kernels {

// y[o] += sum_i w[o,i] x[i]
template <typename T>
void dense_apply(const BasicTensor<T>& w, const T* x, T* y) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  const T* wp = w.data();
  for (std::size_t o = 0; o < out; ++o) {
    const T* row = wp + o * in;
    T acc = 0;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] += acc;
  }
}

// gx[i] += sum_o w[o,i] gy[o]
template <typename T>
void dense_apply_t(const BasicTensor<T>& w, const T* gy, T* gx) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  const T* wp = w.data();
  for (std::size_t o = 0; o < out; ++o) {
    const T g = gy[o];
    if (g == T{0}) continue;
    const T* row = wp + o * in;
    for (std::size_t i = 0; i < in; ++i) gx[i] += row[i] * g;
  }
}

// gw[o,i] += gy[o] x[i]
template <typename T>
void dense_weight_grad(const T* gy, const T* x, BasicTensor<T>& gw) {
  const std::size_t out = gw.dim(0), in = gw.dim(1);
  T* gp = gw.data();
  for (std::size_t o = 0; o < out; ++o) {
    const T g = gy[o];
    if (g == T{0}) continue;
    T* row = gp + o * in;
    for (std::size_t i = 0; i < in; ++i) row[i] += g * x[i];
  }
}

struct ConvGeometry {
  std::size_t in_ch, in_h, in_w, out_ch, out_h, out_w, kh, kw, stride, pad;

  // Output columns whose input column ow*stride + kj - pad is in range.
  void col_range(std::size_t kj, std::size_t& lo, std::size_t& hi) const {
    // need 0 <= ow*stride + kj - pad < in_w
    long first = static_cast<long>(pad) - static_cast<long>(kj);
    lo = first <= 0 ? 0 : static_cast<std::size_t>((first + static_cast<long>(stride) - 1) /
                                                    static_cast<long>(stride));
    long last = static_cast<long>(in_w) - 1 + static_cast<long>(pad) - static_cast<long>(kj);
    if (last < 0) {
      lo = 1;
      hi = 0;
      return;
    }
    hi = std::min(out_w, static_cast<std::size_t>(last) / stride + 1);
  }
};

inline ConvGeometry conv_geometry(const Shape& kernel, const Shape& in, std::size_t stride,
                                  std::size_t pad) {
  ConvGeometry g{};
  g.in_ch = in[0];
  g.in_h = in[1];
  g.in_w = in[2];
  g.out_ch = kernel[0];
  g.kh = kernel[2];
  g.kw = kernel[3];
  g.stride = stride;
  g.pad = pad;
  g.out_h = (g.in_h + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - g.kw) / stride + 1;
  return g;
}

// Visits every (kernel tap, output row) pair of the direct convolution as
// fn(weight index, input row offset, output row offset, first col, end col, kj).
template <typename Fn>
void conv_for_each(const ConvGeometry& g, Fn&& fn) {
  for (std::size_t o = 0; o < g.out_ch; ++o) {
    for (std::size_t c = 0; c < g.in_ch; ++c) {
      for (std::size_t ki = 0; ki < g.kh; ++ki) {
        for (std::size_t kj = 0; kj < g.kw; ++kj) {
          const std::size_t widx = ((o * g.in_ch + c) * g.kh + ki) * g.kw + kj;
          std::size_t lo, hi;
          g.col_range(kj, lo, hi);
          if (lo >= hi) continue;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
            if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
            const std::size_t in_row = (c * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
            const std::size_t out_row = (o * g.out_h + oh) * g.out_w;
            fn(widx, in_row, out_row, lo, hi, kj);
          }
        }
      }
    }
  }
}

template <typename T>
void conv_apply(const BasicTensor<T>& k, const ConvGeometry& g, const T* x, T* y) {
  const T* kp = k.data();
  conv_for_each(g, [&](std::size_t widx, std::size_t in_row, std::size_t out_row, std::size_t lo,
                       std::size_t hi, std::size_t kj) {
    const T w = kp[widx];
    if (w == T{0}) return;
    // lo guarantees ow * stride + kj >= pad
    const T* xr = x + in_row;
    const std::size_t shift = kj - std::min(kj, g.pad), back = g.pad - std::min(kj, g.pad);
    T* yr = y + out_row;
    if (g.stride == 1) {
      for (std::size_t ow = lo; ow < hi; ++ow) yr[ow] += w * xr[ow + shift - back];
    } else {
      for (std::size_t ow = lo; ow < hi; ++ow) yr[ow] += w * xr[ow * g.stride + shift - back];
    }
  });
}

template <typename T>
void conv_apply_t(const BasicTensor<T>& k, const ConvGeometry& g, const T* gy, T* gx) {
  const T* kp = k.data();
  conv_for_each(g, [&](std::size_t widx, std::size_t in_row, std::size_t out_row, std::size_t lo,
                       std::size_t hi, std::size_t kj) {
    const T w = kp[widx];
    if (w == T{0}) return;
    T* xr = gx + in_row;
    const std::size_t shift = kj - std::min(kj, g.pad), back = g.pad - std::min(kj, g.pad);
    const T* yr = gy + out_row;
    for (std::size_t ow = lo; ow < hi; ++ow) xr[ow * g.stride + shift - back] += w * yr[ow];
  });
}

template <typename T>
void conv_weight_grad(const ConvGeometry& g, const T* gy, const T* x, BasicTensor<T>& gk) {
  T* gp = gk.data();
  conv_for_each(g, [&](std::size_t widx, std::size_t in_row, std::size_t out_row, std::size_t lo,
                       std::size_t hi, std::size_t kj) {
    const T* xr = x + in_row;
    const std::size_t shift = kj - std::min(kj, g.pad), back = g.pad - std::min(kj, g.pad);
    const T* yr = gy + out_row;
    T acc = 0;
    for (std::size_t ow = lo; ow < hi; ++ow) acc += yr[ow] * xr[ow * g.stride + shift - back];
    gp[widx] += acc;
  });
}

// Non-overlapping square average pooling and its adjoint.
template <typename T>
BasicTensor<T> avgpool_forward(std::size_t w, const BasicTensor<T>& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t oh = h / w, ow = wd / w;
  BasicTensor<T> y({c, oh, ow});
  const T scale = T{1} / static_cast<T>(w * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        T acc = 0;
        for (std::size_t a = 0; a < w; ++a) {
          const T* row = x.data() + (ch * h + i * w + a) * wd + j * w;
          for (std::size_t b = 0; b < w; ++b) acc += row[b];
        }
        y[(ch * oh + i) * ow + j] = acc * scale;
      }
    }
  }
  return y;
}

template <typename T>
void avgpool_backward(std::size_t w, const Shape& in_shape, const BasicTensor<T>& gy,
                      BasicTensor<T>& gx) {
  const std::size_t c = in_shape[0], h = in_shape[1], wd = in_shape[2];
  const std::size_t oh = h / w, ow = wd / w;
  const T scale = T{1} / static_cast<T>(w * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const T g = gy[(ch * oh + i) * ow + j] * scale;
        for (std::size_t a = 0; a < w; ++a) {
          T* row = gx.data() + (ch * h + i * w + a) * wd + j * w;
          for (std::size_t b = 0; b < w; ++b) row[b] += g;
        }
      }
    }
  }
}

}  // namespace prood::kernels

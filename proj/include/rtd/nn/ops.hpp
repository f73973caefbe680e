#pragma once

#include <cmath>
#include <cstddef>

#include <Eigen/Core>

#include "rtd/core/error.hpp"
#include "rtd/core/tensor.hpp"

// Dense building blocks shared by the three networks. Images are NCHW
// tensors; convolution weights are [out, in, k, k] and transposed
// convolution weights are [in, out, k, k].
namespace rtd::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;
// Column-per-example feature matrices.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;

  int conv_out(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  int deconv_out(int in) const { return (in - 1) * stride - 2 * pad + kernel; }
};

// cols is [C*k*k, Ho*Wo] row-major.
template <typename T>
void im2col(const T* x, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* cols) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, T{0});
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : T{0};
          }
        }
      }
}

// Scatter-adds cols back onto the image grid (adjoint of im2col).
template <typename T>
void col2im(const T* cols, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* x) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          T* dst = x + (static_cast<std::size_t>(c) * height + iy) * width;
          const T* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvGeometry& g) {
  if (x.rank() != 4 || x.dim(1) != g.in_channels)
    throw ShapeError("conv2d input " + shape_str(x.shape()) + " expects " + std::to_string(g.in_channels) + " channels");
  const int n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const int oh = g.conv_out(h), ow = g.conv_out(wd);
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d output would be empty");
  const int kk = g.in_channels * g.kernel * g.kernel;
  Tensor<T> y({n, g.out_channels, oh, ow});
  std::vector<T> cols(static_cast<std::size_t>(kk) * oh * ow);
  ConstRowMap<T> wm(w.data(), g.out_channels, kk);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(b.data(), g.out_channels);
  for (int s = 0; s < n; ++s) {
    im2col(x.data() + static_cast<std::size_t>(s) * g.in_channels * h * wd, g.in_channels, h, wd, g.kernel, g.stride,
           g.pad, oh, ow, cols.data());
    RowMap<T> ym(y.data() + static_cast<std::size_t>(s) * g.out_channels * oh * ow, g.out_channels, oh * ow);
    ym.noalias() = wm * ConstRowMap<T>(cols.data(), kk, oh * ow);
    ym.colwise() += bv;
  }
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor<T> dx;
  Tensor<T> dw;
  Tensor<T> db;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, const ConvGeometry& g,
                             bool need_dx = true) {
  const int n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const int oh = dy.dim(2), ow = dy.dim(3);
  const int kk = g.in_channels * g.kernel * g.kernel;
  ConvGrads<T> out{need_dx ? zeros_like(x) : Tensor<T>{}, zeros_like(w), Tensor<T>({g.out_channels})};
  std::vector<T> cols(static_cast<std::size_t>(kk) * oh * ow);
  ConstRowMap<T> wm(w.data(), g.out_channels, kk);
  RowMap<T> dwm(out.dw.data(), g.out_channels, kk);
  for (int s = 0; s < n; ++s) {
    const std::size_t xoff = static_cast<std::size_t>(s) * g.in_channels * h * wd;
    ConstRowMap<T> dym(dy.data() + static_cast<std::size_t>(s) * g.out_channels * oh * ow, g.out_channels, oh * ow);
    im2col(x.data() + xoff, g.in_channels, h, wd, g.kernel, g.stride, g.pad, oh, ow, cols.data());
    dwm.noalias() += dym * ConstRowMap<T>(cols.data(), kk, oh * ow).transpose();
    for (int o = 0; o < g.out_channels; ++o) {
      const T* row = dym.data() + static_cast<std::size_t>(o) * oh * ow;
      T acc{0};
      for (int i = 0; i < oh * ow; ++i) acc += row[i];
      out.db[o] += acc;
    }
    if (need_dx) {
      RowMap<T> dcols(cols.data(), kk, oh * ow);
      dcols.noalias() = wm.transpose() * dym;
      col2im(cols.data(), g.in_channels, h, wd, g.kernel, g.stride, g.pad, oh, ow, out.dx.data() + xoff);
    }
  }
  return out;
}

// Transposed convolution; weights are [in, out, k, k].
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvGeometry& g) {
  if (x.rank() != 4 || x.dim(1) != g.in_channels) throw ShapeError("deconv2d input " + shape_str(x.shape()));
  const int n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const int oh = g.deconv_out(h), ow = g.deconv_out(wd);
  const int kk = g.out_channels * g.kernel * g.kernel;
  Tensor<T> y({n, g.out_channels, oh, ow});
  std::vector<T> cols(static_cast<std::size_t>(kk) * h * wd);
  ConstRowMap<T> wm(w.data(), g.in_channels, kk);
  for (int s = 0; s < n; ++s) {
    ConstRowMap<T> xm(x.data() + static_cast<std::size_t>(s) * g.in_channels * h * wd, g.in_channels, h * wd);
    RowMap<T>(cols.data(), kk, h * wd).noalias() = wm.transpose() * xm;
    T* ys = y.data() + static_cast<std::size_t>(s) * g.out_channels * oh * ow;
    col2im(cols.data(), g.out_channels, oh, ow, g.kernel, g.stride, g.pad, h, wd, ys);
    for (int o = 0; o < g.out_channels; ++o) {
      T* plane = ys + static_cast<std::size_t>(o) * oh * ow;
      for (int i = 0; i < oh * ow; ++i) plane[i] += b[o];
    }
  }
  return y;
}

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, const ConvGeometry& g,
                               bool need_dx = true) {
  const int n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const int oh = dy.dim(2), ow = dy.dim(3);
  const int kk = g.out_channels * g.kernel * g.kernel;
  ConvGrads<T> out{need_dx ? zeros_like(x) : Tensor<T>{}, zeros_like(w), Tensor<T>({g.out_channels})};
  std::vector<T> cols(static_cast<std::size_t>(kk) * h * wd);
  ConstRowMap<T> wm(w.data(), g.in_channels, kk);
  RowMap<T> dwm(out.dw.data(), g.in_channels, kk);
  for (int s = 0; s < n; ++s) {
    const T* dys = dy.data() + static_cast<std::size_t>(s) * g.out_channels * oh * ow;
    im2col(dys, g.out_channels, oh, ow, g.kernel, g.stride, g.pad, h, wd, cols.data());
    ConstRowMap<T> cm(cols.data(), kk, h * wd);
    ConstRowMap<T> xm(x.data() + static_cast<std::size_t>(s) * g.in_channels * h * wd, g.in_channels, h * wd);
    dwm.noalias() += xm * cm.transpose();
    if (need_dx) {
      RowMap<T>(out.dx.data() + static_cast<std::size_t>(s) * g.in_channels * h * wd, g.in_channels, h * wd)
          .noalias() = wm * cm;
    }
    for (int o = 0; o < g.out_channels; ++o) {
      const T* plane = dys + static_cast<std::size_t>(o) * oh * ow;
      T acc{0};
      for (int i = 0; i < oh * ow; ++i) acc += plane[i];
      out.db[o] += acc;
    }
  }
  return out;
}

template <typename T>
void relu_inplace(Tensor<T>& t) {
  for (T& v : t.values()) v = v > T{0} ? v : T{0};
}

// Zeroes gradient entries where the forward output was not positive.
template <typename T>
void relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& forward_out) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(forward_out[i] > T{0})) grad[i] = T{0};
}

template <typename T>
T sigmoid(T z) {
  if (z >= T{0}) return T{1} / (T{1} + std::exp(-z));
  const T e = std::exp(z);
  return e / (T{1} + e);
}

// Channel concatenation of two NCHW tensors with equal N, H, W.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (int s = 0; s < n; ++s) {
    std::copy_n(a.data() + s * ca * plane, ca * plane, out.data() + s * (ca + cb) * plane);
    std::copy_n(b.data() + s * cb * plane, cb * plane, out.data() + (s * (ca + cb) + ca) * plane);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int first) {
  const int n = t.dim(0), c = t.dim(1);
  const std::size_t plane = static_cast<std::size_t>(t.dim(2)) * t.dim(3);
  Tensor<T> a({n, first, t.dim(2), t.dim(3)}), b({n, c - first, t.dim(2), t.dim(3)});
  for (int s = 0; s < n; ++s) {
    std::copy_n(t.data() + s * c * plane, first * plane, a.data() + s * first * plane);
    std::copy_n(t.data() + (s * c + first) * plane, (c - first) * plane, b.data() + s * (c - first) * plane);
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace rtd::nn

#include "hybridseg/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <string>

namespace hybridseg {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void im2col(const Tensor<T>& x, const ConvShape& s, int out_h, int out_w, std::vector<T>& cols) {
  const int k = s.kernel, pad = s.padding(), stride = s.stride;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  cols.assign(static_cast<std::size_t>(x.channels) * k * k * out_plane, T(0));
  T* dst = cols.data();
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.plane(c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, dst += out_plane)
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.height) continue;
          T* row = dst + static_cast<std::size_t>(oy) * out_w;
          const T* src_row = src + static_cast<std::size_t>(iy) * x.width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < x.width) row[ox] = src_row[ix];
          }
        }
  }
}

template <typename T>
void col2im(const std::vector<T>& cols, const ConvShape& s, int out_h, int out_w, Tensor<T>& dx) {
  const int k = s.kernel, pad = s.padding(), stride = s.stride;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  const T* src = cols.data();
  for (int c = 0; c < dx.channels; ++c) {
    T* dst = dx.plane(c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, src += out_plane)
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= dx.height) continue;
          const T* row = src + static_cast<std::size_t>(oy) * out_w;
          T* dst_row = dst + static_cast<std::size_t>(iy) * dx.width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < dx.width) dst_row[ix] += row[ox];
          }
        }
  }
}

bool is_pointwise(const ConvShape& s) { return s.kernel == 1 && s.stride == 1; }

struct Tap {
  int i0, i1;
  double w1;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double f = std::clamp((o + 0.5) * scale - 0.5, 0.0, in - 1.0);
    const int i0 = static_cast<int>(f);
    taps[o] = {i0, std::min(i0 + 1, in - 1), f - i0};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const ConvShape& s, std::span<const T> weight, std::span<const T> bias, const Tensor<T>& x,
                         ConvCache<T>* cache) {
  if (x.channels != s.in_channels) {
    throw std::invalid_argument("conv2d: expected " + std::to_string(s.in_channels) + " input channels, got " +
                                std::to_string(x.channels));
  }
  const int out_h = s.out_size(x.height), out_w = s.out_size(x.width);
  Tensor<T> out(s.out_channels, out_h, out_w);
  const auto out_plane = static_cast<Eigen::Index>(out.plane_size());
  const auto k_rows = static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel;

  ConstMapMat<T> w(weight.data(), s.out_channels, k_rows);
  MapMat<T> y(out.data.data(), s.out_channels, out_plane);

  std::vector<T> local;
  std::vector<T>& cols = cache ? cache->columns : local;
  if (is_pointwise(s)) {
    if (cache) cols = x.data;
    y.noalias() = w * ConstMapMat<T>(x.data.data(), k_rows, out_plane);
  } else {
    im2col(x, s, out_h, out_w, cols);
    y.noalias() = w * ConstMapMat<T>(cols.data(), k_rows, out_plane);
  }
  for (int c = 0; c < s.out_channels; ++c) y.row(c).array() += bias[c];
  if (cache) {
    cache->in_height = x.height;
    cache->in_width = x.width;
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_backward(const ConvShape& s, std::span<const T> weight, const ConvCache<T>& cache,
                          const Tensor<T>& grad_out, std::span<T> weight_grad, std::span<T> bias_grad,
                          bool need_input_grad) {
  const auto out_plane = static_cast<Eigen::Index>(grad_out.plane_size());
  const auto k_rows = static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel;
  ConstMapMat<T> dy(grad_out.data.data(), s.out_channels, out_plane);
  ConstMapMat<T> cols(cache.columns.data(), k_rows, out_plane);
  MapMat<T> dw(weight_grad.data(), s.out_channels, k_rows);
  dw.noalias() += dy * cols.transpose();
  // Plain loop: Eigen's vectorised sum peels by address, which makes the rounding allocation-dependent.
  for (int c = 0; c < s.out_channels; ++c) {
    const T* row = grad_out.data.data() + c * out_plane;
    T acc = 0;
    for (Eigen::Index i = 0; i < out_plane; ++i) acc += row[i];
    bias_grad[c] += acc;
  }

  Tensor<T> dx;
  if (!need_input_grad) return dx;
  dx = Tensor<T>(s.in_channels, cache.in_height, cache.in_width);
  ConstMapMat<T> w(weight.data(), s.out_channels, k_rows);
  if (is_pointwise(s)) {
    MapMat<T>(dx.data.data(), k_rows, out_plane).noalias() = w.transpose() * dy;
  } else {
    std::vector<T> dcols(static_cast<std::size_t>(k_rows * out_plane));
    MapMat<T>(dcols.data(), k_rows, out_plane).noalias() = w.transpose() * dy;
    col2im(dcols, s, grad_out.height, grad_out.width, dx);
  }
  return dx;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& output) {
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (!(output.data[i] > T(0))) grad.data[i] = T(0);
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  Tensor<T> out(x.channels, 2 * x.height, 2 * x.width);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int xx = 0; xx < out.width; ++xx) out.at(c, y, xx) = x.at(c, y / 2, xx / 2);
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& grad) {
  Tensor<T> out(grad.channels, grad.height / 2, grad.width / 2);
  for (int c = 0; c < grad.channels; ++c)
    for (int y = 0; y < grad.height; ++y)
      for (int xx = 0; xx < grad.width; ++xx) out.at(c, y / 2, xx / 2) += grad.at(c, y, xx);
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("concat_channels: spatial mismatch");
  Tensor<T> out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& grad, int first_channels, Tensor<T>& first, Tensor<T>& second) {
  first = slice_channels(grad, 0, first_channels);
  second = slice_channels(grad, first_channels, grad.channels);
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int end) {
  Tensor<T> out(end - begin, x.height, x.width);
  std::copy(x.plane(begin), x.plane(begin) + out.size(), out.data.begin());
  return out;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int height, int width) {
  if (x.height == height && x.width == width) return x;
  const auto ty = bilinear_taps(x.height, height);
  const auto tx = bilinear_taps(x.width, width);
  Tensor<T> out(x.channels, height, width);
  for (int c = 0; c < x.channels; ++c)
    for (int r = 0; r < height; ++r) {
      const Tap& a = ty[r];
      for (int q = 0; q < width; ++q) {
        const Tap& b = tx[q];
        const double top = (1 - b.w1) * x.at(c, a.i0, b.i0) + b.w1 * x.at(c, a.i0, b.i1);
        const double bottom = (1 - b.w1) * x.at(c, a.i1, b.i0) + b.w1 * x.at(c, a.i1, b.i1);
        out.at(c, r, q) = static_cast<T>((1 - a.w1) * top + a.w1 * bottom);
      }
    }
  return out;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& grad, int in_height, int in_width) {
  if (grad.height == in_height && grad.width == in_width) return grad;
  const auto ty = bilinear_taps(in_height, grad.height);
  const auto tx = bilinear_taps(in_width, grad.width);
  Tensor<T> out(grad.channels, in_height, in_width);
  for (int c = 0; c < grad.channels; ++c)
    for (int r = 0; r < grad.height; ++r) {
      const Tap& a = ty[r];
      for (int q = 0; q < grad.width; ++q) {
        const Tap& b = tx[q];
        const double g = grad.at(c, r, q);
        out.at(c, a.i0, b.i0) += static_cast<T>(g * (1 - a.w1) * (1 - b.w1));
        out.at(c, a.i0, b.i1) += static_cast<T>(g * (1 - a.w1) * b.w1);
        out.at(c, a.i1, b.i0) += static_cast<T>(g * a.w1 * (1 - b.w1));
        out.at(c, a.i1, b.i1) += static_cast<T>(g * a.w1 * b.w1);
      }
    }
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& x, const Tensor<T>& y) {
  if (!x.same_shape(y)) throw std::invalid_argument("add_inplace: shape mismatch");
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += y.data[i];
}

#define HYBRIDSEG_INSTANTIATE_LAYERS(T)                                                                           \
  template Tensor<T> conv2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>, const Tensor<T>&, \
                                       ConvCache<T>*);                                                            \
  template Tensor<T> conv2d_backward<T>(const ConvShape&, std::span<const T>, const ConvCache<T>&,                \
                                        const Tensor<T>&, std::span<T>, std::span<T>, bool);                      \
  template void relu_inplace<T>(Tensor<T>&);                                                                      \
  template void relu_backward_inplace<T>(Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> upsample_nearest2x<T>(const Tensor<T>&);                                                     \
  template Tensor<T> upsample_nearest2x_backward<T>(const Tensor<T>&);                                            \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template void split_channels<T>(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);                                 \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, int, int);                                               \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, int, int);                                              \
  template Tensor<T> bilinear_resize_backward<T>(const Tensor<T>&, int, int);                                     \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);

HYBRIDSEG_INSTANTIATE_LAYERS(float)
HYBRIDSEG_INSTANTIATE_LAYERS(double)

}  // namespace hybridseg

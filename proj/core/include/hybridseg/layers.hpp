#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace hybridseg {

/// Dense CHW feature map for a single sample.
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, T(0)) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  T* plane(int c) { return data.data() + c * plane_size(); }
  const T* plane(int c) const { return data.data() + c * plane_size(); }
  T& at(int c, int y, int x) { return data[(c * static_cast<std::size_t>(height) + y) * width + x]; }
  const T& at(int c, int y, int x) const { return data[(c * static_cast<std::size_t>(height) + y) * width + x]; }
  bool same_shape(const Tensor& o) const { return channels == o.channels && height == o.height && width == o.width; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Shape of a convolution: weight is [out, in * k * k] row-major, bias is [out].
struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding() const { return kernel / 2; }
  std::size_t weight_count() const { return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel; }
  int out_size(int in) const { return (in + 2 * padding() - kernel) / stride + 1; }
};

/// Saved state a convolution needs for its backward pass.
template <typename T>
struct ConvCache {
  int in_height = 0;
  int in_width = 0;
  std::vector<T> columns;
};

template <typename T>
Tensor<T> conv2d_forward(const ConvShape& shape, std::span<const T> weight, std::span<const T> bias,
                         const Tensor<T>& input, ConvCache<T>* cache);

/// Accumulates into weight_grad / bias_grad and returns the input gradient.
template <typename T>
Tensor<T> conv2d_backward(const ConvShape& shape, std::span<const T> weight, const ConvCache<T>& cache,
                          const Tensor<T>& grad_out, std::span<T> weight_grad, std::span<T> bias_grad,
                          bool need_input_grad = true);

template <typename T>
void relu_inplace(Tensor<T>& x);

/// Zeroes grad where the forward output was not positive.
template <typename T>
void relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& output);

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& grad);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Splits a channel-concatenated gradient back into its two parts.
template <typename T>
void split_channels(const Tensor<T>& grad, int first_channels, Tensor<T>& first, Tensor<T>& second);

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int end);

/// Half-pixel-centred bilinear resize of every channel.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int height, int width);
template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& grad, int in_height, int in_width);

template <typename T>
void add_inplace(Tensor<T>& x, const Tensor<T>& y);

}  // namespace hybridseg

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hybridseg {

/// Row-major single-channel 2-D map.
template <typename T>
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<T> values;

  Plane() = default;
  Plane(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {
    if (h < 0 || w < 0) throw std::invalid_argument("negative plane dimensions");
  }

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }

  T& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
  const T& at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }

  friend bool operator==(const Plane& a, const Plane& b) = default;
};

/// Grayscale intensities in [0,1].
using GrayImage = Plane<double>;
/// Binary map with values in {0,1}.
using Mask = Plane<std::uint8_t>;
/// Real-valued per-pixel map (logits, probabilities, weights).
using RealMap = Plane<double>;

inline std::size_t count_foreground(const Mask& mask) {
  std::size_t n = 0;
  for (auto v : mask.values) n += v != 0;
  return n;
}

template <typename A, typename B>
void require_same_shape(const Plane<A>& a, const Plane<B>& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ")");
  }
}

}  // namespace hybridseg

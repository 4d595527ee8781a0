#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "hybridseg/plane.hpp"

namespace hybridseg {

/// 8-bit grayscale image as read from or written to disk.
using Gray8 = Plane<std::uint8_t>;

struct Rgb8Image {
  int height = 0;
  int width = 0;
  std::vector<std::array<std::uint8_t, 3>> pixels;

  std::array<std::uint8_t, 3>& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  const std::array<std::uint8_t, 3>& at(int row, int col) const {
    return pixels[static_cast<std::size_t>(row) * width + col];
  }
};

/// Reads any PNG and converts it to 8-bit grayscale (alpha dropped).
Gray8 read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const Gray8& image);
Rgb8Image read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const Rgb8Image& image);

}  // namespace hybridseg

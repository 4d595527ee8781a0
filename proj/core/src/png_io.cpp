#include "hybridseg/png_io.hpp"

#include <png.h>

#include <cstring>
#include <stdexcept>
#include <string>

namespace hybridseg {
namespace {

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, int& height, int& width) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read png " + path.string() + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode png " + path.string() + ": " + msg);
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return buffer;
}

void write_png(const std::filesystem::path& path, png_uint_32 format, int height, int width, const void* data) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.format = format;
  image.height = static_cast<png_uint_32>(height);
  image.width = static_cast<png_uint_32>(width);
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr)) {
    throw std::runtime_error("cannot write png " + path.string() + ": " + image.message);
  }
}

}  // namespace

Gray8 read_png_gray(const std::filesystem::path& path) {
  Gray8 out;
  out.values = read_png(path, PNG_FORMAT_GRAY, out.height, out.width);
  return out;
}

void write_png_gray(const std::filesystem::path& path, const Gray8& image) {
  write_png(path, PNG_FORMAT_GRAY, image.height, image.width, image.values.data());
}

Rgb8Image read_png_rgb(const std::filesystem::path& path) {
  Rgb8Image out;
  auto raw = read_png(path, PNG_FORMAT_RGB, out.height, out.width);
  out.pixels.resize(raw.size() / 3);
  std::memcpy(out.pixels.data(), raw.data(), raw.size());
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const Rgb8Image& image) {
  write_png(path, PNG_FORMAT_RGB, image.height, image.width, image.pixels.data());
}

}  // namespace hybridseg

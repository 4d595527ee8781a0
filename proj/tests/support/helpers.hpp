#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "hybridseg/data.hpp"
#include "hybridseg/network.hpp"
#include "hybridseg/plane.hpp"
#include "oracles.hpp"

namespace testing_support {

using namespace hybridseg;

template <typename T>
oracle::Grid to_grid(const Plane<T>& p) {
  oracle::Grid g(p.height, std::vector<double>(p.width));
  for (int r = 0; r < p.height; ++r)
    for (int c = 0; c < p.width; ++c) g[r][c] = static_cast<double>(p.at(r, c));
  return g;
}

inline Mask mask_from_rows(std::initializer_list<std::initializer_list<int>> rows) {
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.begin()->size());
  Mask m(h, w);
  int r = 0;
  for (const auto& row : rows) {
    int c = 0;
    for (int v : row) m.at(r, c++) = static_cast<std::uint8_t>(v);
    ++r;
  }
  return m;
}

inline Mask random_mask(std::mt19937_64& rng, int h, int w, double p) {
  std::bernoulli_distribution b(p);
  Mask m(h, w);
  for (auto& v : m.values) v = b(rng);
  return m;
}

/// Random axis-aligned blob of foreground, never empty.
inline Mask random_blob(std::mt19937_64& rng, int h, int w) {
  std::uniform_int_distribution<int> rr(0, h - 1), cc(0, w - 1);
  int r0 = rr(rng), r1 = rr(rng), c0 = cc(rng), c1 = cc(rng);
  if (r0 > r1) std::swap(r0, r1);
  if (c0 > c1) std::swap(c0, c1);
  Mask m(h, w);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) m.at(r, c) = 1;
  return m;
}

inline RealMap random_map(std::mt19937_64& rng, int h, int w, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  RealMap m(h, w);
  for (auto& v : m.values) v = u(rng);
  return m;
}

inline RealMap constant_map(int h, int w, double v) { return RealMap(h, w, v); }

inline BoundingBox random_box(std::mt19937_64& rng, int h, int w) {
  std::uniform_int_distribution<int> rr(0, h), cc(0, w);
  int r0, r1, c0, c1;
  do {
    r0 = rr(rng), r1 = rr(rng);
  } while (r0 == r1);
  do {
    c0 = cc(rng), c1 = cc(rng);
  } while (c0 == c1);
  return {std::min(r0, r1), std::min(c0, c1), std::max(r0, r1), std::max(c0, c1)};
}

/// Small network for wiring and gradient tests (3 stages, input divisible by 8).
inline NetConfig tiny_net(std::uint64_t seed = 1) {
  NetConfig c;
  c.stage_widths = {4, 6, 8};
  c.init_seed = seed;
  return c;
}

/// Shifts every bias by N(0, scale) so no ReLU input sits exactly on its kink (dead channels
/// otherwise pin pre-activations at a zero bias).
template <typename T>
void jitter_biases(Network<T>& net, std::mt19937_64& rng, double scale = 0.05) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& e : net.parameters().entries)
    if (e.name.size() > 5 && e.name.compare(e.name.size() - 5, 5, ".bias") == 0)
      for (auto& v : e.values) v += static_cast<T>(n(rng));
}

/// Same architecture and parameter values in another precision.
template <typename To, typename From>
Network<To> cast_network(const Network<From>& src) {
  Network<To> dst(src.config());
  auto& out = dst.parameters().entries;
  const auto& in = src.parameters().entries;
  for (std::size_t p = 0; p < in.size(); ++p)
    for (std::size_t i = 0; i < in[p].values.size(); ++i) out[p].values[i] = static_cast<To>(in[p].values[i]);
  return dst;
}

inline GrayImage random_image(std::mt19937_64& rng, int h, int w) { return random_map(rng, h, w, 0.0, 1.0); }

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("hybridseg_test_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support

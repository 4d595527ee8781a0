#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hybridseg/plane.hpp"

namespace hybridseg {

/// Half-open integer box: rows [row_min, row_max), cols [col_min, col_max).
struct BoundingBox {
  int row_min = 0;
  int col_min = 0;
  int row_max = 0;
  int col_max = 0;

  int height() const { return row_max - row_min; }
  int width() const { return col_max - col_min; }
  long area() const { return static_cast<long>(height()) * width(); }
  bool contains(int row, int col) const { return row >= row_min && row < row_max && col >= col_min && col < col_max; }
  bool valid_within(int h, int w) const {
    return row_min >= 0 && col_min >= 0 && row_max <= h && col_max <= w && row_min < row_max && col_min < col_max;
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

enum class Supervision { strong, weak };

struct Sample {
  std::string id;
  GrayImage image;
  std::optional<Mask> strong_mask;
  std::optional<BoundingBox> box;
  Supervision supervision = Supervision::weak;

  int height() const { return image.height; }
  int width() const { return image.width; }
};

/// Throws std::invalid_argument if the label invariants of a sample do not hold.
void validate_sample(const Sample& sample);

struct DatasetSplit {
  std::vector<Sample> train_strong;
  std::vector<Sample> train_weak;
  std::vector<Sample> test;
  std::uint64_t seed = 0;
};

struct SynthConfig {
  int image_size = 64;
  int n_samples = 250;
  std::pair<double, double> mass_radius_range{0.08, 0.16};
  double mass_contrast = 0.3;
  double texture_scale = 2.0;
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& cfg);

using Rng = std::mt19937_64;

BoundingBox box_from_mask(const Mask& mask);

/// 1 outside the box (definite background), 0 inside (uncertain area).
Mask reversed_box_mask(const BoundingBox& box, int height, int width);

/// 1 inside the box, 0 outside.
Mask box_fill_mask(const BoundingBox& box, int height, int width);

/// One synthetic mammogram-like sample. The sample is tagged strong and carries both labels.
Sample synthesize_sample(Rng& rng, const SynthConfig& cfg, std::string id);

/// Generates cfg.n_samples samples with ids "synth_00000", ... from an rng seeded with cfg.seed.
std::vector<Sample> synthesize_corpus(const SynthConfig& cfg);

/// Reads images/<id>.png, masks/<id>.png and boxes.csv. Samples are ordered by id.
std::vector<Sample> load_dataset(const std::filesystem::path& root);

/// Writes the layout read by load_dataset. Weak samples get no mask file.
void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& root);

struct FlipChoice {
  bool horizontal = false;
  bool vertical = false;
};

/// Draws a flip choice with independent probability 0.5 per axis.
FlipChoice draw_flips(Rng& rng);
Sample apply_flips(const Sample& sample, FlipChoice flips);
Sample augment(const Sample& sample, Rng& rng);

GrayImage resize_bilinear(const GrayImage& image, int height, int width);
Mask resize_nearest(const Mask& mask, int height, int width);
/// Scales box coordinates from (src_h, src_w) to (dst_h, dst_w), rounding outward.
BoundingBox rescale_box(const BoundingBox& box, int src_h, int src_w, int dst_h, int dst_w);
Sample resize_sample(const Sample& sample, int size);

}  // namespace hybridseg

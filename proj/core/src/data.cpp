#include "hybridseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "hybridseg/png_io.hpp"

namespace hybridseg {
namespace fs = std::filesystem;

void validate_sample(const Sample& s) {
  const auto fail = [&](const std::string& msg) { throw std::invalid_argument("sample " + s.id + ": " + msg); };
  if (s.image.empty()) fail("empty image");
  if (s.supervision == Supervision::strong && !s.strong_mask) fail("strong sample without mask");
  if (s.supervision == Supervision::weak && !s.box) fail("weak sample without box");
  if (s.strong_mask) {
    require_same_shape(s.image, *s.strong_mask, ("sample " + s.id + " mask").c_str());
    if (count_foreground(*s.strong_mask) == 0) fail("empty mask");
  }
  if (s.box) {
    if (!s.box->valid_within(s.height(), s.width())) fail("box out of bounds");
    if (s.strong_mask) {
      const Mask& m = *s.strong_mask;
      for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
          if (m.at(r, c) && !s.box->contains(r, c)) fail("mask foreground outside box");
    }
  }
}

void validate(const SynthConfig& cfg) {
  if (cfg.image_size < 8) throw std::invalid_argument("image_size: must be >= 8");
  if (cfg.n_samples < 0) throw std::invalid_argument("n_samples: must be >= 0");
  const auto [lo, hi] = cfg.mass_radius_range;
  if (!(lo > 0 && hi < 0.5 && lo <= hi)) throw std::invalid_argument("mass_radius_range: fractions must lie in (0, 0.5)");
  if (!(cfg.mass_contrast > 0 && cfg.mass_contrast <= 1))
    throw std::invalid_argument("mass_contrast: must lie in (0, 1]");
  if (!(cfg.texture_scale >= 0)) throw std::invalid_argument("texture_scale: must be >= 0");
}

BoundingBox box_from_mask(const Mask& mask) {
  BoundingBox box{mask.height, mask.width, -1, -1};
  bool any = false;
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      any = true;
      box.row_min = std::min(box.row_min, r);
      box.col_min = std::min(box.col_min, c);
      box.row_max = std::max(box.row_max, r + 1);
      box.col_max = std::max(box.col_max, c + 1);
    }
  }
  if (!any) throw std::invalid_argument("empty mask");
  return box;
}

namespace {

void check_box(const BoundingBox& box, int height, int width) {
  if (!box.valid_within(height, width)) {
    std::ostringstream os;
    os << "box (" << box.row_min << "," << box.col_min << "," << box.row_max << "," << box.col_max
       << ") out of bounds for " << height << "x" << width;
    throw std::invalid_argument(os.str());
  }
}

Mask fill_box(const BoundingBox& box, int height, int width, std::uint8_t inside, std::uint8_t outside) {
  check_box(box, height, width);
  Mask out(height, width, outside);
  for (int r = box.row_min; r < box.row_max; ++r)
    for (int c = box.col_min; c < box.col_max; ++c) out.at(r, c) = inside;
  return out;
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

Plane<double> gaussian_blur(const Plane<double>& src, double sigma) {
  if (sigma < 0.25) return src;
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= sum;

  Plane<double> tmp(src.height, src.width), out(src.height, src.width);
  for (int r = 0; r < src.height; ++r)
    for (int c = 0; c < src.width; ++c) {
      double acc = 0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * src.at(r, reflect(c + k, src.width));
      tmp.at(r, c) = acc;
    }
  for (int r = 0; r < src.height; ++r)
    for (int c = 0; c < src.width; ++c) {
      double acc = 0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(reflect(r + k, src.height), c);
      out.at(r, c) = acc;
    }
  return out;
}

double segment_distance(double r, double c, double r0, double c0, double r1, double c1) {
  const double dr = r1 - r0, dc = c1 - c0;
  const double len2 = dr * dr + dc * dc;
  double t = len2 > 0 ? ((r - r0) * dr + (c - c0) * dc) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(r - (r0 + t * dr), c - (c0 + t * dc));
}

}  // namespace

Mask reversed_box_mask(const BoundingBox& box, int height, int width) { return fill_box(box, height, width, 0, 1); }

Mask box_fill_mask(const BoundingBox& box, int height, int width) { return fill_box(box, height, width, 1, 0); }

Sample synthesize_sample(Rng& rng, const SynthConfig& cfg, std::string id) {
  validate(cfg);
  const int n = cfg.image_size;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  // Background texture: smoothed white noise, standardized.
  Plane<double> noise(n, n);
  for (auto& v : noise.values) v = normal(rng);
  noise = gaussian_blur(noise, cfg.texture_scale);
  double mean = 0, var = 0;
  for (double v : noise.values) mean += v;
  mean /= static_cast<double>(noise.size());
  for (double v : noise.values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(noise.size()));
  Plane<double> image(n, n);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double z = sd > 0 ? (noise.values[i] - mean) / sd : 0.0;
    image.values[i] = std::clamp(0.35 + 0.1 * z, 0.0, 1.0);
  }

  // Elongated bright streaks with the same brightness range as the mass.
  const int n_glands = 2 + static_cast<int>(unit(rng) * 3);
  for (int g = 0; g < n_glands; ++g) {
    const double r0 = uniform(0, n), c0 = uniform(0, n);
    const double angle = uniform(0, std::numbers::pi);
    const double length = uniform(0.3, 0.8) * n;
    const double r1 = r0 + length * std::sin(angle), c1 = c0 + length * std::cos(angle);
    const double thickness = uniform(0.8, 2.0);
    const double amplitude = uniform(0.5, 1.0) * cfg.mass_contrast;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        const double d = segment_distance(r, c, r0, c0, r1, c1);
        image.at(r, c) += amplitude * std::exp(-0.5 * d * d / (thickness * thickness));
      }
  }

  // Mass: one rotated ellipse placed fully inside the image.
  Mask mask(n, n, 0);
  for (int attempt = 0;; ++attempt) {
    if (attempt > 10000) throw std::logic_error("synthesize_sample: could not place mass");
    const double a = uniform(cfg.mass_radius_range.first, cfg.mass_radius_range.second) * n;
    const double b = uniform(cfg.mass_radius_range.first, cfg.mass_radius_range.second) * n;
    const double theta = uniform(0, std::numbers::pi);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double half_c = std::sqrt(a * a * ct * ct + b * b * st * st);
    const double half_r = std::sqrt(a * a * st * st + b * b * ct * ct);
    if (2 * half_c > n - 1 || 2 * half_r > n - 1) continue;
    const double cc = uniform(half_c, n - 1 - half_c);
    const double cr = uniform(half_r, n - 1 - half_r);
    std::fill(mask.values.begin(), mask.values.end(), 0);
    std::size_t count = 0;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        const double u = (c - cc) * ct + (r - cr) * st;
        const double v = -(c - cc) * st + (r - cr) * ct;
        if (u * u / (a * a) + v * v / (b * b) <= 1.0) {
          mask.at(r, c) = 1;
          ++count;
        }
      }
    if (count > 0) break;
  }

  Plane<double> support(n, n);
  for (std::size_t i = 0; i < support.size(); ++i) support.values[i] = mask.values[i];
  const Plane<double> soft = gaussian_blur(support, 1.0);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double edge = std::max(support.values[i], soft.values[i]);
    image.values[i] = std::clamp(image.values[i] + cfg.mass_contrast * edge, 0.0, 1.0);
  }

  Sample s;
  s.id = std::move(id);
  s.image = std::move(image);
  s.box = box_from_mask(mask);
  s.strong_mask = std::move(mask);
  s.supervision = Supervision::strong;
  return s;
}

std::vector<Sample> synthesize_corpus(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(cfg.n_samples));
  for (int i = 0; i < cfg.n_samples; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05d", i);
    out.push_back(synthesize_sample(rng, cfg, id));
  }
  return out;
}

namespace {

constexpr const char* kBoxesHeader = "id,row_min,col_min,row_max,col_max";

std::map<std::string, BoundingBox> read_boxes(const fs::path& path) {
  std::map<std::string, BoundingBox> boxes;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) return boxes;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kBoxesHeader) throw std::runtime_error(path.string() + ": expected header '" + kBoxesHeader + "'");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, field;
    std::getline(ss, id, ',');
    int v[4];
    for (int& x : v) {
      if (!std::getline(ss, field, ',')) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": too few fields");
      try {
        x = std::stoi(field);
      } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad integer '" + field + "'");
      }
    }
    if (!boxes.emplace(id, BoundingBox{v[0], v[1], v[2], v[3]}).second)
      throw std::runtime_error(path.string() + ": duplicate id " + id);
  }
  return boxes;
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset directory not found: " + root.string());
  const fs::path image_dir = root / "images";
  std::vector<Sample> samples;
  if (!fs::is_directory(image_dir)) return samples;

  std::map<std::string, BoundingBox> boxes;
  if (fs::exists(root / "boxes.csv")) boxes = read_boxes(root / "boxes.csv");

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(image_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<std::string> unlabeled;
  for (const auto& file : files) {
    Sample s;
    s.id = file.stem().string();
    const Gray8 raw = read_png_gray(file);
    s.image = GrayImage(raw.height, raw.width);
    for (std::size_t i = 0; i < raw.size(); ++i) s.image.values[i] = raw.values[i] / 255.0;

    const fs::path mask_path = root / "masks" / (s.id + ".png");
    if (fs::exists(mask_path)) {
      const Gray8 m = read_png_gray(mask_path);
      if (m.height != raw.height || m.width != raw.width) {
        throw std::runtime_error("sample " + s.id + ": image is " + std::to_string(raw.height) + "x" +
                                 std::to_string(raw.width) + " but mask is " + std::to_string(m.height) + "x" +
                                 std::to_string(m.width));
      }
      Mask mask(m.height, m.width);
      for (std::size_t i = 0; i < m.size(); ++i) mask.values[i] = m.values[i] > 127 ? 1 : 0;
      s.strong_mask = std::move(mask);
    }
    if (auto it = boxes.find(s.id); it != boxes.end()) {
      s.box = it->second;
      boxes.erase(it);
    } else if (s.strong_mask) {
      if (count_foreground(*s.strong_mask) == 0) throw std::runtime_error("sample " + s.id + ": empty mask");
      s.box = box_from_mask(*s.strong_mask);
    }
    if (!s.box && !s.strong_mask) {
      unlabeled.push_back(s.id);
      continue;
    }
    s.supervision = s.strong_mask ? Supervision::strong : Supervision::weak;
    validate_sample(s);
    samples.push_back(std::move(s));
  }
  if (!unlabeled.empty()) {
    std::string msg = "samples without box or mask:";
    for (const auto& id : unlabeled) msg += " " + id;
    throw std::runtime_error(msg);
  }
  if (!boxes.empty()) throw std::runtime_error("boxes.csv references unknown id " + boxes.begin()->first);
  return samples;
}

void save_dataset(const std::vector<Sample>& samples, const fs::path& root) {
  fs::create_directories(root / "images");
  bool any_mask = false;
  for (const auto& s : samples) any_mask |= s.strong_mask.has_value();
  if (any_mask) fs::create_directories(root / "masks");

  std::ofstream boxes(root / "boxes.csv", std::ios::binary);
  boxes << kBoxesHeader << "\n";
  for (const auto& s : samples) {
    validate_sample(s);
    Gray8 img(s.height(), s.width());
    for (std::size_t i = 0; i < img.size(); ++i)
      img.values[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s.image.values[i], 0.0, 1.0) * 255.0));
    write_png_gray(root / "images" / (s.id + ".png"), img);
    if (s.strong_mask) {
      Gray8 m(s.height(), s.width());
      for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = s.strong_mask->values[i] ? 255 : 0;
      write_png_gray(root / "masks" / (s.id + ".png"), m);
    }
    if (s.box) {
      boxes << s.id << "," << s.box->row_min << "," << s.box->col_min << "," << s.box->row_max << ","
            << s.box->col_max << "\n";
    }
  }
  if (!boxes) throw std::runtime_error("failed writing " + (root / "boxes.csv").string());
}

FlipChoice draw_flips(Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  FlipChoice f;
  f.horizontal = coin(rng);
  f.vertical = coin(rng);
  return f;
}

namespace {

template <typename T>
Plane<T> flip_plane(const Plane<T>& p, FlipChoice f) {
  Plane<T> out(p.height, p.width);
  for (int r = 0; r < p.height; ++r)
    for (int c = 0; c < p.width; ++c)
      out.at(f.vertical ? p.height - 1 - r : r, f.horizontal ? p.width - 1 - c : c) = p.at(r, c);
  return out;
}

}  // namespace

Sample apply_flips(const Sample& sample, FlipChoice f) {
  if (!f.horizontal && !f.vertical) return sample;
  Sample out = sample;
  out.image = flip_plane(sample.image, f);
  if (sample.strong_mask) out.strong_mask = flip_plane(*sample.strong_mask, f);
  if (sample.box) {
    BoundingBox b = *sample.box;
    if (f.horizontal) b = {b.row_min, sample.width() - b.col_max, b.row_max, sample.width() - b.col_min};
    if (f.vertical) b = {sample.height() - b.row_max, b.col_min, sample.height() - b.row_min, b.col_max};
    out.box = b;
  }
  return out;
}

Sample augment(const Sample& sample, Rng& rng) { return apply_flips(sample, draw_flips(rng)); }

GrayImage resize_bilinear(const GrayImage& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  GrayImage out(height, width);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      out.at(r, c) = (1 - wy) * ((1 - wx) * image.at(y0, x0) + wx * image.at(y0, x1)) +
                     wy * ((1 - wx) * image.at(y1, x0) + wx * image.at(y1, x1));
    }
  }
  return out;
}

Mask resize_nearest(const Mask& mask, int height, int width) {
  if (mask.height == height && mask.width == width) return mask;
  Mask out(height, width);
  for (int r = 0; r < height; ++r) {
    const int sr = std::min(static_cast<int>((r + 0.5) * mask.height / height), mask.height - 1);
    for (int c = 0; c < width; ++c) {
      const int sc = std::min(static_cast<int>((c + 0.5) * mask.width / width), mask.width - 1);
      out.at(r, c) = mask.at(sr, sc);
    }
  }
  return out;
}

BoundingBox rescale_box(const BoundingBox& box, int src_h, int src_w, int dst_h, int dst_w) {
  const double sy = static_cast<double>(dst_h) / src_h;
  const double sx = static_cast<double>(dst_w) / src_w;
  BoundingBox out;
  out.row_min = std::clamp(static_cast<int>(std::floor(box.row_min * sy)), 0, dst_h - 1);
  out.col_min = std::clamp(static_cast<int>(std::floor(box.col_min * sx)), 0, dst_w - 1);
  out.row_max = std::clamp(static_cast<int>(std::ceil(box.row_max * sy)), out.row_min + 1, dst_h);
  out.col_max = std::clamp(static_cast<int>(std::ceil(box.col_max * sx)), out.col_min + 1, dst_w);
  return out;
}

Sample resize_sample(const Sample& sample, int size) {
  if (size < 16) throw std::invalid_argument("resize_sample: size must be >= 16");
  if (sample.height() == size && sample.width() == size) return sample;
  Sample out;
  out.id = sample.id;
  out.supervision = sample.supervision;
  out.image = resize_bilinear(sample.image, size, size);
  if (sample.box) out.box = rescale_box(*sample.box, sample.height(), sample.width(), size, size);
  if (sample.strong_mask) {
    Mask m = resize_nearest(*sample.strong_mask, size, size);
    if (count_foreground(m) == 0) {
      // Mass thinner than one output pixel: keep the pixel under its centroid.
      double sr = 0, sc = 0, n = 0;
      const Mask& src = *sample.strong_mask;
      for (int r = 0; r < src.height; ++r)
        for (int c = 0; c < src.width; ++c)
          if (src.at(r, c)) sr += r + 0.5, sc += c + 0.5, n += 1;
      const int r = std::clamp(static_cast<int>(sr / n * size / src.height), 0, size - 1);
      const int c = std::clamp(static_cast<int>(sc / n * size / src.width), 0, size - 1);
      m.at(r, c) = 1;
    }
    out.strong_mask = std::move(m);
  }
  return out;
}

}  // namespace hybridseg

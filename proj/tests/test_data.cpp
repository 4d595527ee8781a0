#include <gtest/gtest.h>

#include <fstream>

#include "helpers.hpp"
#include "hybridseg/data.hpp"
#include "hybridseg/png_io.hpp"

using namespace hybridseg;
using namespace testing_support;

namespace {

Mask single_pixel(int h, int w, int r, int c) {
  Mask m(h, w);
  m.at(r, c) = 1;
  return m;
}

}  // namespace

TEST(BoxFromMask, SinglePixel) {
  EXPECT_EQ(box_from_mask(single_pixel(8, 8, 3, 4)), (BoundingBox{3, 4, 4, 5}));
}

TEST(BoxFromMask, FullMask) { EXPECT_EQ(box_from_mask(Mask(8, 8, 1)), (BoundingBox{0, 0, 8, 8})); }

TEST(BoxFromMask, Rectangle) {
  Mask m(8, 8);
  for (int r = 2; r <= 4; ++r)
    for (int c = 3; c <= 6; ++c) m.at(r, c) = 1;
  EXPECT_EQ(box_from_mask(m), (BoundingBox{2, 3, 5, 7}));
}

TEST(BoxFromMask, EmptyMaskThrows) {
  try {
    box_from_mask(Mask(4, 4));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "empty mask");
  }
}

TEST(ReversedBoxMask, FullImageBoxIsAllZero) {
  const Mask m = reversed_box_mask({0, 0, 5, 7}, 5, 7);
  EXPECT_EQ(count_foreground(m), 0u);
}

TEST(ReversedBoxMask, CentrePixel) {
  const Mask m = reversed_box_mask({1, 1, 2, 2}, 3, 3);
  EXPECT_EQ(m.at(1, 1), 0);
  EXPECT_EQ(count_foreground(m), 8u);
}

TEST(ReversedBoxMask, OutOfBoundsThrows) {
  EXPECT_THROW(reversed_box_mask({0, 0, 4, 3}, 3, 3), std::invalid_argument);
  EXPECT_THROW(box_fill_mask({-1, 0, 2, 2}, 3, 3), std::invalid_argument);
  EXPECT_THROW(box_fill_mask({1, 1, 1, 2}, 3, 3), std::invalid_argument);
}

TEST(BoxFillMask, CentrePixelAndFullImage) {
  const Mask m = box_fill_mask({1, 1, 2, 2}, 3, 3);
  EXPECT_EQ(m.at(1, 1), 1);
  EXPECT_EQ(count_foreground(m), 1u);
  EXPECT_EQ(count_foreground(box_fill_mask({0, 0, 4, 6}, 4, 6)), 24u);
}

TEST(BoxLabels, ComplementAndRoundTripProperties) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 20), w = 1 + static_cast<int>(rng() % 20);
    const BoundingBox b = random_box(rng, h, w);
    const Mask rev = reversed_box_mask(b, h, w);
    const Mask fill = box_fill_mask(b, h, w);
    for (std::size_t i = 0; i < rev.size(); ++i) ASSERT_EQ(rev.values[i] + fill.values[i], 1);
    ASSERT_EQ(static_cast<long>(count_foreground(rev)) + b.area(), static_cast<long>(h) * w);
    ASSERT_EQ(box_from_mask(fill), b);
  }
}

TEST(Synthesis, SameSeedIsBitIdentical) {
  SynthConfig cfg;
  cfg.n_samples = 5;
  cfg.seed = 42;
  const auto a = synthesize_corpus(cfg);
  const auto b = synthesize_corpus(cfg);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(*a[i].strong_mask, *b[i].strong_mask);
    EXPECT_EQ(*a[i].box, *b[i].box);
  }
  cfg.seed = 43;
  EXPECT_NE(synthesize_corpus(cfg)[0].image, a[0].image);
}

TEST(Synthesis, SamplesSatisfyLabelInvariants) {
  SynthConfig cfg;
  cfg.n_samples = 50;
  for (const auto& s : synthesize_corpus(cfg)) {
    EXPECT_NO_THROW(validate_sample(s));
    EXPECT_EQ(s.supervision, Supervision::strong);
    EXPECT_EQ(*s.box, box_from_mask(*s.strong_mask));
    for (double v : s.image.values) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    // Mask foreground never marked definite background.
    const Mask rev = reversed_box_mask(*s.box, s.height(), s.width());
    for (std::size_t i = 0; i < rev.size(); ++i) ASSERT_FALSE(rev.values[i] && s.strong_mask->values[i]);
  }
}

TEST(Synthesis, HighContrastThresholdRecoversMask) {
  SynthConfig cfg;
  cfg.n_samples = 20;
  cfg.mass_contrast = 1.0;
  cfg.texture_scale = 0.0;
  for (const auto& s : synthesize_corpus(cfg)) {
    const Mask& m = *s.strong_mask;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m.values[i]) ASSERT_GE(s.image.values[i], 0.5) << s.id;
  }
}

TEST(Synthesis, ForegroundFractionMatchesRadiusRange) {
  // An ellipse with semi-axes a, b (fractions of the size) covers pi a b of the image. With both
  // axes uniform on [lo, hi], E[a b] = ((lo + hi) / 2)^2.
  SynthConfig cfg;
  cfg.n_samples = 200;
  cfg.image_size = 64;
  double total = 0;
  for (const auto& s : synthesize_corpus(cfg))
    total += static_cast<double>(count_foreground(*s.strong_mask)) / static_cast<double>(s.image.size());
  const double mean = total / cfg.n_samples;
  const double mid = 0.5 * (cfg.mass_radius_range.first + cfg.mass_radius_range.second);
  const double expected = 3.14159265358979 * mid * mid;
  EXPECT_NEAR(mean, expected, 0.2 * expected);
}

TEST(SynthConfigValidation, RejectsBadFields) {
  SynthConfig c;
  c.mass_radius_range = {0.1, 0.6};
  EXPECT_THROW(validate(c), std::invalid_argument);
  c = {};
  c.mass_contrast = 0;
  EXPECT_THROW(validate(c), std::invalid_argument);
  c = {};
  c.image_size = 4;
  EXPECT_THROW(validate(c), std::invalid_argument);
}

TEST(Flips, InvolutionAndCountInvariance) {
  SynthConfig cfg;
  cfg.n_samples = 10;
  for (const auto& s : synthesize_corpus(cfg)) {
    for (FlipChoice f : {FlipChoice{true, false}, FlipChoice{false, true}, FlipChoice{true, true}}) {
      const Sample once = apply_flips(s, f);
      const Sample twice = apply_flips(once, f);
      EXPECT_EQ(twice.image, s.image);
      EXPECT_EQ(*twice.strong_mask, *s.strong_mask);
      EXPECT_EQ(*twice.box, *s.box);
      EXPECT_EQ(count_foreground(*once.strong_mask), count_foreground(*s.strong_mask));
      EXPECT_NO_THROW(validate_sample(once));
      EXPECT_EQ(*once.box, box_from_mask(*once.strong_mask));
    }
  }
}

TEST(Flips, HorizontalBoxReflection) {
  Sample s;
  s.id = "x";
  s.image = GrayImage(8, 10);
  s.box = BoundingBox{2, 3, 5, 7};
  s.supervision = Supervision::weak;
  const Sample h = apply_flips(s, {true, false});
  EXPECT_EQ(*h.box, (BoundingBox{2, 3, 5, 7}));  // symmetric placement: (10-7, 10-3)
  s.box = BoundingBox{2, 1, 5, 4};
  EXPECT_EQ(*apply_flips(s, {true, false}).box, (BoundingBox{2, 6, 5, 9}));
  EXPECT_EQ(*apply_flips(s, {false, true}).box, (BoundingBox{3, 1, 6, 4}));
}

TEST(Flips, DrawIsRoughlyFair) {
  Rng rng(5);
  int h = 0, v = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const FlipChoice f = draw_flips(rng);
    h += f.horizontal;
    v += f.vertical;
  }
  EXPECT_NEAR(h / double(n), 0.5, 0.04);
  EXPECT_NEAR(v / double(n), 0.5, 0.04);
}

TEST(Resize, SameSizeIsIdentity) {
  SynthConfig cfg;
  cfg.n_samples = 3;
  for (const auto& s : synthesize_corpus(cfg)) {
    const Sample r = resize_sample(s, s.height());
    EXPECT_EQ(r.image, s.image);
    EXPECT_EQ(*r.strong_mask, *s.strong_mask);
    EXPECT_EQ(*r.box, *s.box);
  }
}

TEST(Resize, MasksStayBinaryAndInsideRescaledBox) {
  SynthConfig cfg;
  cfg.n_samples = 100;
  cfg.image_size = 48;
  int i = 0;
  for (const auto& s : synthesize_corpus(cfg)) {
    const int size = (i++ % 2) ? 32 : 80;
    const Sample r = resize_sample(s, size);
    ASSERT_EQ(r.height(), size);
    for (auto v : r.strong_mask->values) ASSERT_TRUE(v == 0 || v == 1);
    ASSERT_GT(count_foreground(*r.strong_mask), 0u);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (r.strong_mask->at(y, x)) ASSERT_TRUE(r.box->contains(y, x)) << s.id;
  }
}

TEST(Resize, RejectsTinyTargets) {
  SynthConfig cfg;
  cfg.n_samples = 1;
  EXPECT_THROW(resize_sample(synthesize_corpus(cfg)[0], 8), std::invalid_argument);
}

TEST(Resize, BilinearPreservesConstants) {
  GrayImage img(10, 14, 0.37);
  const GrayImage r = resize_bilinear(img, 23, 5);
  for (double v : r.values) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Dataset, SaveLoadRoundTrip) {
  TempDir dir("roundtrip");
  SynthConfig cfg;
  cfg.n_samples = 6;
  cfg.image_size = 32;
  auto samples = synthesize_corpus(cfg);
  save_dataset(samples, dir.path());
  const auto loaded = load_dataset(dir.path());
  ASSERT_EQ(loaded.size(), samples.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    EXPECT_EQ(loaded[i].id, samples[i].id);
    EXPECT_EQ(*loaded[i].strong_mask, *samples[i].strong_mask);
    EXPECT_EQ(*loaded[i].box, *samples[i].box);
    EXPECT_EQ(loaded[i].supervision, Supervision::strong);
    for (std::size_t k = 0; k < loaded[i].image.size(); ++k)
      ASSERT_NEAR(loaded[i].image.values[k], samples[i].image.values[k], 0.5 / 255 + 1e-12);
  }
}

TEST(Dataset, MasksWithoutBoxesTableGiveDerivedBoxes) {
  TempDir dir("noboxes");
  SynthConfig cfg;
  cfg.n_samples = 3;
  cfg.image_size = 32;
  save_dataset(synthesize_corpus(cfg), dir.path());
  std::filesystem::remove(dir / "boxes.csv");
  const auto loaded = load_dataset(dir.path());
  ASSERT_EQ(loaded.size(), 3u);
  for (const auto& s : loaded) {
    EXPECT_EQ(s.supervision, Supervision::strong);
    EXPECT_EQ(*s.box, box_from_mask(*s.strong_mask));
  }
}

TEST(Dataset, BoxWithoutMaskIsWeak) {
  TempDir dir("weak");
  SynthConfig cfg;
  cfg.n_samples = 2;
  cfg.image_size = 32;
  auto samples = synthesize_corpus(cfg);
  samples[1].strong_mask.reset();
  samples[1].supervision = Supervision::weak;
  save_dataset(samples, dir.path());
  const auto loaded = load_dataset(dir.path());
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].supervision, Supervision::strong);
  EXPECT_EQ(loaded[1].supervision, Supervision::weak);
  EXPECT_FALSE(loaded[1].strong_mask.has_value());
  EXPECT_EQ(*loaded[1].box, *samples[1].box);
}

TEST(Dataset, BoxesTableTakesPrecedence) {
  TempDir dir("prefer");
  SynthConfig cfg;
  cfg.n_samples = 1;
  cfg.image_size = 32;
  auto samples = synthesize_corpus(cfg);
  BoundingBox wide{0, 0, 32, 32};
  samples[0].box = wide;
  save_dataset(samples, dir.path());
  EXPECT_EQ(*load_dataset(dir.path())[0].box, wide);
}

TEST(Dataset, EmptyDirectoryGivesEmptyList) {
  TempDir dir("empty");
  EXPECT_TRUE(load_dataset(dir.path()).empty());
  std::filesystem::create_directories(dir / "images");
  EXPECT_TRUE(load_dataset(dir.path()).empty());
}

TEST(Dataset, UnlabeledImageIsReportedById) {
  TempDir dir("unlabeled");
  std::filesystem::create_directories(dir / "images");
  write_png_gray(dir / "images" / "lonely.png", Gray8(16, 16, 10));
  try {
    load_dataset(dir.path());
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("lonely"), std::string::npos);
  }
}

TEST(Dataset, MismatchedMaskDimensionsThrow) {
  TempDir dir("mismatch");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  write_png_gray(dir / "images" / "a.png", Gray8(16, 16, 10));
  write_png_gray(dir / "masks" / "a.png", Gray8(16, 12, 255));
  EXPECT_THROW(load_dataset(dir.path()), std::runtime_error);
}

TEST(Dataset, MissingDirectoryThrows) {
  EXPECT_THROW(load_dataset("/nonexistent/hybridseg/dataset"), std::runtime_error);
}

TEST(Dataset, BadBoxesHeaderThrows) {
  TempDir dir("header");
  std::filesystem::create_directories(dir / "images");
  write_png_gray(dir / "images" / "a.png", Gray8(16, 16, 10));
  std::ofstream(dir / "boxes.csv") << "id,x,y,w,h\na,0,0,4,4\n";
  EXPECT_THROW(load_dataset(dir.path()), std::runtime_error);
}

TEST(SampleValidation, Invariants) {
  Sample s;
  s.id = "s";
  s.image = GrayImage(4, 4);
  s.supervision = Supervision::strong;
  EXPECT_THROW(validate_sample(s), std::invalid_argument);  // strong without mask
  s.strong_mask = Mask(4, 4);
  EXPECT_THROW(validate_sample(s), std::invalid_argument);  // empty mask
  s.strong_mask->at(0, 0) = 1;
  EXPECT_NO_THROW(validate_sample(s));
  s.box = BoundingBox{1, 1, 3, 3};
  EXPECT_THROW(validate_sample(s), std::invalid_argument);  // foreground outside box
  s.strong_mask.reset();
  s.supervision = Supervision::weak;
  EXPECT_NO_THROW(validate_sample(s));
  s.box.reset();
  EXPECT_THROW(validate_sample(s), std::invalid_argument);  // weak without box
}

#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "hybridseg/losses.hpp"
#include "hybridseg/network.hpp"

using namespace hybridseg;
using namespace testing_support;

namespace {

template <typename T>
void perturb_prefix(Network<T>& net, const std::string& prefix, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> n(0.0, scale);
  int touched = 0;
  for (auto& e : net.parameters().entries)
    if (e.name.rfind(prefix, 0) == 0) {
      for (auto& v : e.values) v += static_cast<T>(n(rng));
      ++touched;
    }
  ASSERT_GT(touched, 0) << prefix;
}

Tensor<double> filled(int c, int h, int w, double v) {
  Tensor<double> t(c, h, w);
  for (auto& x : t.data) x = v;
  return t;
}

}  // namespace

TEST(NetConfigValidation, Rules) {
  NetConfig c;
  EXPECT_NO_THROW(validate(c));
  c.stage_widths = {16, 32};
  EXPECT_THROW(validate(c), std::invalid_argument);
  c.stage_widths = {16, 31, 64};
  EXPECT_THROW(validate(c), std::invalid_argument);
  c.stage_widths = {32, 16, 64};
  EXPECT_THROW(validate(c), std::invalid_argument);
  EXPECT_NO_THROW(validate(full_scale_net_config()));
  c = {};
  c.aux_branch = false;
  c.ablate_fd = true;
  EXPECT_THROW(validate(c), std::invalid_argument);
}

TEST(Encoder, DeskStageShapes) {
  Network<float> net(NetConfig{});
  GrayImage img(64, 64, 0.3);
  const auto stages = net.encode(to_tensor<float>(img));
  ASSERT_EQ(stages.size(), 4u);
  const int expect[4][2] = {{32, 16}, {16, 32}, {8, 64}, {4, 128}};
  for (int l = 0; l < 4; ++l) {
    EXPECT_EQ(stages[l].height, expect[l][0]);
    EXPECT_EQ(stages[l].width, expect[l][0]);
    EXPECT_EQ(stages[l].channels, expect[l][1]);
  }
}

TEST(Encoder, DeterministicAndFiniteOnZeroInput) {
  Network<float> net(NetConfig{});
  std::mt19937_64 rng(1);
  const GrayImage img = random_image(rng, 64, 64);
  EXPECT_EQ(net.forward(img).seg_logits, net.forward(img).seg_logits);
  const ModelOutput zero = net.forward(GrayImage(64, 64, 0.0));
  for (double v : zero.seg_logits.values) ASSERT_TRUE(std::isfinite(v));
  for (double v : zero.bg_logits.values) ASSERT_TRUE(std::isfinite(v));
}

TEST(Encoder, IndivisibleInputThrows) {
  Network<float> net(NetConfig{});
  EXPECT_THROW(net.forward(GrayImage(60, 64)), std::invalid_argument);
  Network<double> tiny(tiny_net());
  EXPECT_THROW(tiny.forward(GrayImage(16, 12)), std::invalid_argument);
}

TEST(Network, SameSeedSameParameters) {
  Network<double> a(tiny_net(3)), b(tiny_net(3)), c(tiny_net(4));
  EXPECT_EQ(a.parameters().entries.front().values, b.parameters().entries.front().values);
  EXPECT_NE(a.parameters().entries.front().values, c.parameters().entries.front().values);
}

TEST(Disentangle, ShapesMatchInput) {
  Network<double> net(tiny_net());
  std::mt19937_64 rng(2);
  const auto feats = net.encode(to_tensor<double>(random_image(rng, 16, 16)));
  const auto d = net.disentangle(feats);
  for (std::size_t l = 0; l < feats.size(); ++l) {
    EXPECT_TRUE(d.lesion_related[l].same_shape(feats[l]));
    EXPECT_TRUE(d.other[l].same_shape(feats[l]));
    EXPECT_NE(d.lesion_related[l], d.other[l]);
  }
}

TEST(Disentangle, AblationPassesFeaturesThrough) {
  NetConfig c = tiny_net();
  c.ablate_fd = true;
  Network<double> net(c);
  std::mt19937_64 rng(3);
  const auto feats = net.encode(to_tensor<double>(random_image(rng, 16, 16)));
  const auto d = net.disentangle(feats);
  for (std::size_t l = 0; l < feats.size(); ++l) {
    EXPECT_EQ(d.lesion_related[l], feats[l]);
    EXPECT_EQ(d.other[l], feats[l]);
  }
  EXPECT_FALSE(net.parameters().find("disentangle.stage1.lesion.weight").has_value());
}

TEST(Disentangle, OtherProjectionDoesNotTouchLesionStream) {
  Network<double> net(tiny_net());
  std::mt19937_64 rng(4);
  const auto feats = net.encode(to_tensor<double>(random_image(rng, 16, 16)));
  const auto before = net.disentangle(feats);
  for (int l = 1; l <= 3; ++l) perturb_prefix(net, "disentangle.stage" + std::to_string(l) + ".other", rng);
  const auto after = net.disentangle(feats);
  for (std::size_t l = 0; l < feats.size(); ++l) {
    EXPECT_EQ(after.lesion_related[l], before.lesion_related[l]);
    EXPECT_NE(after.other[l], before.other[l]);
  }
}

TEST(Disentangle, BottleneckOnly) {
  NetConfig c = tiny_net();
  c.bottleneck_only = true;
  Network<double> net(c);
  EXPECT_FALSE(net.disentangles_stage(0));
  EXPECT_FALSE(net.disentangles_stage(1));
  EXPECT_TRUE(net.disentangles_stage(2));
  EXPECT_FALSE(net.prompts_stage(0));
  EXPECT_TRUE(net.prompts_stage(2));
  std::mt19937_64 rng(5);
  const auto feats = net.encode(to_tensor<double>(random_image(rng, 16, 16)));
  const auto d = net.disentangle(feats);
  EXPECT_EQ(d.lesion_related[0], feats[0]);
  EXPECT_NE(d.lesion_related[2], feats[2]);
}

TEST(Uncertainty, ScalarValues) {
  Tensor<double> z(1, 1, 3);
  z.data = {0.0, 60.0, -2.0};
  const auto u = Network<double>::uncertainty_from_background(z);
  EXPECT_DOUBLE_EQ(u.data[0], 0.5);
  EXPECT_LT(u.data[1], 1e-25);
  EXPECT_NEAR(u.data[2], 1.0 - 1.0 / (1.0 + std::exp(2.0)), 1e-15);
  EXPECT_NEAR(u.data[2], 0.8808, 1e-4);
}

TEST(Prompt, IdentityAnnihilationScaling) {
  Network<double> net(tiny_net());
  std::mt19937_64 rng(6);
  const auto feats = net.encode(to_tensor<double>(random_image(rng, 16, 16)));
  const auto lesion = net.disentangle(feats).lesion_related;

  const auto same = net.prompt(lesion, filled(1, 16, 16, 1.0));
  const auto zero = net.prompt(lesion, filled(1, 16, 16, 0.0));
  const auto half = net.prompt(lesion, filled(1, 16, 16, 0.5));
  for (std::size_t l = 0; l < lesion.size(); ++l)
    for (std::size_t i = 0; i < lesion[l].size(); ++i) {
      EXPECT_NEAR(same[l].data[i], lesion[l].data[i], 1e-15);
      EXPECT_EQ(zero[l].data[i], 0.0);
      EXPECT_NEAR(half[l].data[i], 0.5 * lesion[l].data[i], 1e-15);
    }

  NetConfig c = tiny_net();
  c.ablate_spm = true;
  Network<double> off(c);
  const auto untouched = off.prompt(lesion, filled(1, 16, 16, 0.0));
  for (std::size_t l = 0; l < lesion.size(); ++l) EXPECT_EQ(untouched[l], lesion[l]);
}

TEST(Forward, ShapesAndUncertaintyRelation) {
  Network<double> net(tiny_net());
  std::mt19937_64 rng(7);
  const ModelOutput out = net.forward(random_image(rng, 24, 16));
  for (const RealMap* m : {&out.seg_logits, &out.bg_logits, &out.uncertainty}) {
    EXPECT_EQ(m->height, 24);
    EXPECT_EQ(m->width, 16);
  }
  for (std::size_t i = 0; i < out.uncertainty.size(); ++i) {
    EXPECT_NEAR(out.uncertainty.values[i], 1.0 - sigmoid(out.bg_logits.values[i]), 1e-14);
    EXPECT_GT(out.uncertainty.values[i], 0.0);
    EXPECT_LT(out.uncertainty.values[i], 1.0);
  }
}

TEST(Forward, SingleDecoderHasNoBackgroundBranch) {
  NetConfig c = tiny_net();
  c.aux_branch = false;
  Network<double> net(c);
  std::mt19937_64 rng(8);
  const ModelOutput out = net.forward(random_image(rng, 16, 16));
  EXPECT_FALSE(out.has_aux());
  EXPECT_EQ(out.seg_logits.height, 16);
  for (const auto& e : net.parameters().entries) {
    EXPECT_NE(e.name.rfind("dec_bg", 0), 0u) << e.name;
    EXPECT_NE(e.name.rfind("disentangle", 0), 0u) << e.name;
  }
}

// With prompting disabled the segmentation path never reads the background decoder.
TEST(Wiring, AblateSpmIsolatesSegmentationFromBackgroundDecoder) {
  NetConfig c = tiny_net();
  c.ablate_spm = true;
  Network<double> net(c);
  std::mt19937_64 rng(9);
  const GrayImage img = random_image(rng, 16, 16);
  const ModelOutput before = net.forward(img);
  perturb_prefix(net, "dec_bg", rng);
  const ModelOutput after = net.forward(img);
  EXPECT_EQ(after.seg_logits, before.seg_logits);
  EXPECT_NE(after.bg_logits, before.bg_logits);
}

TEST(Wiring, PromptingCouplesBackgroundDecoderIntoSegmentation) {
  Network<double> net(tiny_net());
  std::mt19937_64 rng(10);
  const GrayImage img = random_image(rng, 16, 16);
  const ModelOutput before = net.forward(img);
  perturb_prefix(net, "dec_bg", rng);
  EXPECT_NE(net.forward(img).seg_logits, before.seg_logits);
}

TEST(Wiring, LesionProjectionDoesNotReachBackground) {
  Network<double> net(tiny_net());
  std::mt19937_64 rng(11);
  const GrayImage img = random_image(rng, 16, 16);
  const ModelOutput before = net.forward(img);
  perturb_prefix(net, "disentangle.stage1.lesion", rng);
  perturb_prefix(net, "disentangle.stage3.lesion", rng);
  perturb_prefix(net, "dec_seg", rng);
  const ModelOutput after = net.forward(img);
  EXPECT_EQ(after.bg_logits, before.bg_logits);
  EXPECT_NE(after.seg_logits, before.seg_logits);
}

TEST(Wiring, FullAblationFeedsBothDecodersTheEncoderFeatures) {
  NetConfig c = tiny_net();
  c.ablate_fd = true;
  c.ablate_spm = true;
  Network<double> net(c);
  std::mt19937_64 rng(12);
  const auto feats = net.encode(to_tensor<double>(random_image(rng, 16, 16)));
  const auto d = net.disentangle(feats);
  const auto prompted = net.prompt(d.lesion_related, filled(1, 16, 16, 0.3));
  for (std::size_t l = 0; l < feats.size(); ++l) {
    EXPECT_EQ(prompted[l], feats[l]);
    EXPECT_EQ(d.other[l], feats[l]);
  }
}

namespace {

// Scalar test loss L = <R_s, seg_logits> + <R_b, bg_logits>.
template <typename T>
double probe_loss(const Network<T>& net, const GrayImage& img, const RealMap& rs, const RealMap& rb) {
  const ModelOutput out = net.forward(img);
  double l = 0;
  for (std::size_t i = 0; i < rs.size(); ++i) l += rs.values[i] * out.seg_logits.values[i];
  if (out.has_aux())
    for (std::size_t i = 0; i < rb.size(); ++i) l += rb.values[i] * out.bg_logits.values[i];
  return l;
}

template <typename T>
Gradients<T> probe_gradients(const Network<T>& net, const GrayImage& img, const RealMap& rs, const RealMap& rb) {
  ForwardCache<T> cache;
  const ModelOutput out = net.forward(img, cache);
  Gradients<T> g = net.zero_gradients();
  net.backward(cache, rs, out.has_aux() ? &rb : nullptr, g);
  return g;
}

}  // namespace

TEST(Gradients, CoordinateChecksAt64Bit) {
  for (NetConfig c : {tiny_net(21), [] {
                        NetConfig x = tiny_net(22);
                        x.ablate_fd = true;
                        return x;
                      }(),
                      [] {
                        NetConfig x = tiny_net(23);
                        x.aux_branch = false;
                        return x;
                      }()}) {
    Network<double> net(c);
    std::mt19937_64 rng(c.init_seed);
    jitter_biases(net, rng);
    const GrayImage img = random_image(rng, 16, 16);
    const RealMap rs = random_map(rng, 16, 16, -1, 1), rb = random_map(rng, 16, 16, -1, 1);
    const Gradients<double> g = probe_gradients(net, img, rs, rb);
    auto& entries = net.parameters().entries;
    int checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t p = rng() % entries.size();
      const std::size_t i = rng() % entries[p].values.size();
      const double h = 1e-6;
      const double saved = entries[p].values[i];
      entries[p].values[i] = saved + h;
      const double up = probe_loss(net, img, rs, rb);
      entries[p].values[i] = saved - h;
      const double down = probe_loss(net, img, rs, rb);
      entries[p].values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(g[p][i]), 1e-6});
      EXPECT_LT(std::abs(numeric - g[p][i]) / scale, 1e-4) << entries[p].name << "[" << i << "]";
      ++checked;
    }
    EXPECT_GE(checked, 20);
  }
}

TEST(Gradients, DetachedUncertaintyBlocksSegLossFromBackgroundDecoder) {
  NetConfig c = tiny_net();
  c.detach_uncertainty = true;
  Network<double> net(c);
  std::mt19937_64 rng(30);
  const GrayImage img = random_image(rng, 16, 16);
  const RealMap rs = random_map(rng, 16, 16, -1, 1);
  ForwardCache<double> cache;
  net.forward(img, cache);
  Gradients<double> g = net.zero_gradients();
  net.backward(cache, rs, nullptr, g);
  const auto& entries = net.parameters().entries;
  for (std::size_t p = 0; p < entries.size(); ++p) {
    if (entries[p].name.rfind("dec_bg", 0) != 0 && entries[p].name.find(".other.") == std::string::npos) continue;
    for (double v : g[p]) ASSERT_EQ(v, 0.0) << entries[p].name;
  }

  Network<double> attached(tiny_net());
  ForwardCache<double> cache2;
  attached.forward(img, cache2);
  Gradients<double> g2 = attached.zero_gradients();
  attached.backward(cache2, rs, nullptr, g2);
  const std::size_t bg_out = *attached.parameters().find("dec_bg.out.weight");
  double mag = 0;
  for (double v : g2[bg_out]) mag += std::abs(v);
  EXPECT_GT(mag, 0.0);
}

// 32-bit backprop against central differences of the same parameters evaluated at 64 bits.
TEST(Gradients, DirectionalChecksAt32Bit) {
  Network<float> net(tiny_net(40));
  std::mt19937_64 rng(40);
  jitter_biases(net, rng);
  const GrayImage img = random_image(rng, 16, 16);
  const RealMap rs = random_map(rng, 16, 16, -1, 1), rb = random_map(rng, 16, 16, -1, 1);
  const Gradients<float> g = probe_gradients(net, img, rs, rb);
  Network<double> ref = cast_network<double>(net);
  auto& entries = ref.parameters().entries;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    // Direction supported on 20 randomly chosen parameters.
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    std::vector<double> dir;
    double norm = 0;
    for (int k = 0; k < 20; ++k) {
      const std::size_t p = rng() % entries.size();
      coords.emplace_back(p, rng() % entries[p].values.size());
      dir.push_back(normal(rng));
      norm += dir.back() * dir.back();
    }
    double analytic = 0;
    for (int k = 0; k < 20; ++k) {
      dir[k] /= std::sqrt(norm);
      analytic += dir[k] * g[coords[k].first][coords[k].second];
    }
    const auto shifted = [&](double h) {
      auto saved = entries;
      for (int k = 0; k < 20; ++k) entries[coords[k].first].values[coords[k].second] += h * dir[k];
      const double l = probe_loss(ref, img, rs, rb);
      entries = std::move(saved);
      return l;
    };
    const double h = 1e-6;
    const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
    EXPECT_LT(std::abs(numeric - analytic) / std::max(std::abs(analytic), 1e-3), 1e-2)
        << "trial " << trial << " analytic " << analytic << " numeric " << numeric;
  }
}

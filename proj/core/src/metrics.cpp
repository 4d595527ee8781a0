#include "hybridseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "hybridseg/parallel.hpp"

namespace hybridseg {

double dice(const RealMap& pred_prob, const Mask& gt, double threshold) {
  require_same_shape(pred_prob, gt, "dice");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool pi = pred_prob.values[i] >= threshold;
    const bool gi = gt.values[i] != 0;
    p += pi;
    g += gi;
    both += pi && gi;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

namespace {

constexpr double kRegionEps = std::numeric_limits<double>::epsilon();

// 2 mean / (mean^2 + 1 + std), sample standard deviation.
double object_similarity(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = x.size() > 1 ? std::sqrt(ss / static_cast<double>(x.size() - 1)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sd);
}

double object_score(const RealMap& pred, const Mask& gt, double fg_fraction) {
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.values[i])
      fg.push_back(pred.values[i]);
    else
      bg.push_back(1.0 - pred.values[i]);
  }
  return fg_fraction * object_similarity(fg) + (1.0 - fg_fraction) * object_similarity(bg);
}

double quadrant_similarity(const RealMap& pred, const Mask& gt, int r0, int r1, int c0, int c1) {
  const double n = static_cast<double>(r1 - r0) * (c1 - c0);
  if (n == 0) return 0.0;
  double mx = 0, my = 0;
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) mx += pred.at(r, c), my += gt.at(r, c);
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cxy = 0;
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) {
      const double dx = pred.at(r, c) - mx, dy = gt.at(r, c) - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  const double dof = n > 1 ? n - 1 : 1;
  vx /= dof;
  vy /= dof;
  cxy /= dof;
  const double alpha = 4.0 * mx * my * cxy;
  const double beta = (mx * mx + my * my) * (vx + vy);
  if (alpha != 0) return alpha / (beta + kRegionEps);
  return beta == 0 ? 1.0 : 0.0;
}

double region_score(const RealMap& pred, const Mask& gt) {
  const int h = gt.height, w = gt.width;
  double sr = 0, sc = 0, n = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (gt.at(r, c)) sr += r, sc += c, n += 1;
  // Pixel boundary nearest the centroid, pixel centres at +0.5; ties go to the even boundary.
  const int split_r = std::clamp(static_cast<int>(std::nearbyint(sr / n + 0.5)), 0, h);
  const int split_c = std::clamp(static_cast<int>(std::nearbyint(sc / n + 0.5)), 0, w);
  const double area = static_cast<double>(h) * w;
  const double w_lt = static_cast<double>(split_r) * split_c / area;
  const double w_rt = static_cast<double>(split_r) * (w - split_c) / area;
  const double w_lb = static_cast<double>(h - split_r) * split_c / area;
  const double w_rb = static_cast<double>(h - split_r) * (w - split_c) / area;
  return w_lt * quadrant_similarity(pred, gt, 0, split_r, 0, split_c) +
         w_rt * quadrant_similarity(pred, gt, 0, split_r, split_c, w) +
         w_lb * quadrant_similarity(pred, gt, split_r, h, 0, split_c) +
         w_rb * quadrant_similarity(pred, gt, split_r, h, split_c, w);
}

}  // namespace

double s_measure(const RealMap& pred_prob, const Mask& gt) {
  require_same_shape(pred_prob, gt, "s_measure");
  if (gt.empty()) throw std::invalid_argument("s_measure: empty map");
  const double n = static_cast<double>(gt.size());
  const double fg = static_cast<double>(count_foreground(gt));
  double mean_pred = 0;
  for (double v : pred_prob.values) mean_pred += v;
  mean_pred /= n;
  if (fg == 0) return 1.0 - mean_pred;
  if (fg == n) return mean_pred;
  const double s = 0.5 * object_score(pred_prob, gt, fg / n) + 0.5 * region_score(pred_prob, gt);
  return std::clamp(s, 0.0, 1.0);
}

MetricsReport aggregate_metrics(std::vector<SampleMetrics> per_sample) {
  std::sort(per_sample.begin(), per_sample.end(),
            [](const SampleMetrics& a, const SampleMetrics& b) { return a.id < b.id; });
  MetricsReport report;
  if (!per_sample.empty()) {
    double d = 0, s = 0;
    for (const auto& m : per_sample) d += m.dice, s += m.s_measure;
    report.mean_dice = 100.0 * d / static_cast<double>(per_sample.size());
    report.mean_sm = 100.0 * s / static_cast<double>(per_sample.size());
  }
  report.per_sample = std::move(per_sample);
  return report;
}

MetricsReport evaluate_dataset(const Predictor& predict, std::span<const Sample> samples, const EvalConfig& cfg) {
  for (const auto& s : samples)
    if (!s.strong_mask) throw std::invalid_argument("evaluate_dataset: sample " + s.id + " has no strong mask");
  std::vector<SampleMetrics> per_sample(samples.size());
  parallel_for(samples.size(), cfg.threads, [&](std::size_t i) {
    const Sample& original = samples[i];
    const Sample resized = cfg.resolution > 0 ? resize_sample(original, cfg.resolution) : original;
    RealMap probs = predict(resized);
    require_same_shape(probs, resized.image, "predictor output");
    const Mask* gt = &*resized.strong_mask;
    if (cfg.native) {
      probs = resize_bilinear(probs, original.height(), original.width());
      gt = &*original.strong_mask;
    }
    per_sample[i] = {original.id, dice(probs, *gt, cfg.threshold), s_measure(probs, *gt)};
  });
  return aggregate_metrics(std::move(per_sample));
}

std::string format_result_row(const std::string& method, double strong_pct, double weak_pct,
                              const std::string& dataset, double dice_pct, double sm_pct) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%g,%g,%s,%.2f,%.2f", method.c_str(), strong_pct, weak_pct, dataset.c_str(),
                dice_pct, sm_pct);
  return buf;
}

}  // namespace hybridseg

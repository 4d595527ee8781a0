#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hybridseg/data.hpp"
#include "hybridseg/plane.hpp"

namespace hybridseg {

/// Dice of (pred >= threshold) against gt; 1 when both are empty.
double dice(const RealMap& pred_prob, const Mask& gt, double threshold = 0.5);

/// Structure measure: 0.5 * object-aware + 0.5 * region-aware similarity, in [0,1].
double s_measure(const RealMap& pred_prob, const Mask& gt);

struct SampleMetrics {
  std::string id;
  double dice = 0;       // [0,1]
  double s_measure = 0;  // [0,1]
};

struct MetricsReport {
  /// Sorted by id.
  std::vector<SampleMetrics> per_sample;
  double mean_dice = 0;  // percent
  double mean_sm = 0;    // percent
};

MetricsReport aggregate_metrics(std::vector<SampleMetrics> per_sample);

struct EvalConfig {
  /// Square resolution the predictor runs at; 0 keeps each sample's own size.
  int resolution = 0;
  double threshold = 0.5;
  /// Score at the ground-truth resolution (prediction resized back) rather than at `resolution`.
  bool native = true;
  int threads = 1;
};

/// Maps a (resized) sample to foreground probabilities of the same size. Must be thread-safe.
using Predictor = std::function<RealMap(const Sample&)>;

MetricsReport evaluate_dataset(const Predictor& predict, std::span<const Sample> samples, const EvalConfig& cfg);

/// `method,strong_pct,weak_pct,dataset,dice,sm` with two-decimal percentages.
std::string format_result_row(const std::string& method, double strong_pct, double weak_pct,
                              const std::string& dataset, double dice_pct, double sm_pct);
constexpr const char* kResultsHeader = "method,strong_pct,weak_pct,dataset,dice,sm";

}  // namespace hybridseg

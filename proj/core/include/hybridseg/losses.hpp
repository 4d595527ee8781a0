#pragma once

#include <optional>
#include <span>

#include "hybridseg/network.hpp"
#include "hybridseg/plane.hpp"

namespace hybridseg {

double sigmoid(double z);
RealMap sigmoid(const RealMap& logits);

/// w = 1 + 5 |meanpool_k(gt) - gt|, k x k pool with stride 1 and zero padding (divisor k^2).
RealMap ppa_weights(const Mask& gt, int kernel);

/// Weight-normalized binary cross-entropy on logits.
double weighted_bce(const RealMap& logits, const Mask& gt, const RealMap& weights);
/// d weighted_bce / d logits.
RealMap weighted_bce_grad(const RealMap& logits, const Mask& gt, const RealMap& weights);

/// 1 - (sum w p g + eps) / (sum w (p + g - p g) + eps).
double weighted_iou(const RealMap& probs, const Mask& gt, const RealMap& weights, double eps = 1.0);
/// d weighted_iou / d probs.
RealMap weighted_iou_grad(const RealMap& probs, const Mask& gt, const RealMap& weights, double eps = 1.0);

struct PpaOptions {
  int kernel = 7;
  double iou_eps = 1.0;
};

double ppa_loss(const RealMap& logits, const Mask& gt, const PpaOptions& opts = {});
/// d ppa_loss / d logits.
RealMap ppa_loss_grad(const RealMap& logits, const Mask& gt, const PpaOptions& opts = {});

/// Soft 1 - TN / (TN + FP) over the uncertain region (y_w = 0) of the background prediction:
/// the mean background probability there, or 0 when there is no uncertain pixel.
double perception_loss(const RealMap& bg_probs, const Mask& reversed_box);
/// d perception_loss / d bg_probs.
RealMap perception_loss_grad(const RealMap& bg_probs, const Mask& reversed_box);
/// Count-based version on thresholded predictions, for reporting.
double perception_loss_hard(const RealMap& bg_probs, const Mask& reversed_box, double threshold = 0.5);

/// Per-branch supervision for one sample. A missing target disables that loss term.
struct BranchTargets {
  std::optional<Mask> seg;
  /// Reversed box mask y_w for the background branch.
  std::optional<Mask> aux;
};

struct LossOptions {
  PpaOptions ppa;
  /// false drops the perception term (ablation "w/o PL").
  bool perception = true;
};

struct LossReport {
  double ppa_seg = 0;
  double ppa_aux = 0;
  double percept_aux = 0;
  double total = 0;
  int n_seg = 0;
  int n_aux = 0;
  int n_percept = 0;
};

/// Loss terms of one sample, and optionally their gradients w.r.t. the two logit maps.
struct SampleLoss {
  std::optional<double> ppa_seg;
  std::optional<double> ppa_aux;
  std::optional<double> percept_aux;
  RealMap seg_grad_ppa;
  RealMap bg_grad_ppa;
  RealMap bg_grad_percept;
};

SampleLoss sample_loss(const ModelOutput& out, const BranchTargets& targets, const LossOptions& opts,
                       bool with_grad);

/// Per-term means over eligible samples, summed without weights.
LossReport total_loss(std::span<const ModelOutput> outputs, std::span<const BranchTargets> targets,
                      const LossOptions& opts);

/// Aggregates per-sample terms the same way total_loss does.
LossReport aggregate(std::span<const SampleLoss> losses);

}  // namespace hybridseg

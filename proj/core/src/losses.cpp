#include "hybridseg/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace hybridseg {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

RealMap sigmoid(const RealMap& logits) {
  RealMap p(logits.height, logits.width);
  for (std::size_t i = 0; i < p.size(); ++i) p.values[i] = sigmoid(logits.values[i]);
  return p;
}

RealMap ppa_weights(const Mask& gt, int kernel) {
  if (kernel <= 0 || kernel % 2 == 0) throw std::invalid_argument("ppa_weights: kernel must be odd and positive");
  const int h = gt.height, w = gt.width, r = kernel / 2;
  std::vector<double> integral(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
  const auto I = [&](int y, int x) -> double& { return integral[static_cast<std::size_t>(y) * (w + 1) + x]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) I(y + 1, x + 1) = gt.at(y, x) + I(y, x + 1) + I(y + 1, x) - I(y, x);

  RealMap weights(h, w);
  const double area = static_cast<double>(kernel) * kernel;
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r), y1 = std::min(h, y + r + 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(w, x + r + 1);
      const double pooled = (I(y1, x1) - I(y0, x1) - I(y1, x0) + I(y0, x0)) / area;
      weights.at(y, x) = 1.0 + 5.0 * std::abs(pooled - gt.at(y, x));
    }
  }
  return weights;
}

namespace {

void check_shapes(const RealMap& a, const Mask& gt, const RealMap& w, const char* what) {
  require_same_shape(a, gt, what);
  require_same_shape(a, w, what);
}

double weight_sum(const RealMap& w) {
  double s = 0;
  for (double v : w.values) s += v;
  return s;
}

}  // namespace

double weighted_bce(const RealMap& logits, const Mask& gt, const RealMap& weights) {
  check_shapes(logits, gt, weights, "weighted_bce");
  double num = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits.values[i];
    const double g = gt.values[i];
    // -g log s(z) - (1-g) log(1-s(z)) = max(z,0) - z g + log(1 + e^{-|z|})
    num += weights.values[i] * (std::max(z, 0.0) - z * g + std::log1p(std::exp(-std::abs(z))));
  }
  return num / weight_sum(weights);
}

RealMap weighted_bce_grad(const RealMap& logits, const Mask& gt, const RealMap& weights) {
  check_shapes(logits, gt, weights, "weighted_bce_grad");
  const double denom = weight_sum(weights);
  RealMap g(logits.height, logits.width);
  for (std::size_t i = 0; i < g.size(); ++i)
    g.values[i] = weights.values[i] * (sigmoid(logits.values[i]) - gt.values[i]) / denom;
  return g;
}

namespace {

struct IouTerms {
  double inter;
  double uni;
};

IouTerms iou_terms(const RealMap& probs, const Mask& gt, const RealMap& weights, double eps) {
  IouTerms t{eps, eps};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs.values[i], g = gt.values[i], w = weights.values[i];
    t.inter += w * p * g;
    t.uni += w * (p + g - p * g);
  }
  return t;
}

}  // namespace

double weighted_iou(const RealMap& probs, const Mask& gt, const RealMap& weights, double eps) {
  check_shapes(probs, gt, weights, "weighted_iou");
  const IouTerms t = iou_terms(probs, gt, weights, eps);
  return 1.0 - t.inter / t.uni;
}

RealMap weighted_iou_grad(const RealMap& probs, const Mask& gt, const RealMap& weights, double eps) {
  check_shapes(probs, gt, weights, "weighted_iou_grad");
  const IouTerms t = iou_terms(probs, gt, weights, eps);
  const double u2 = t.uni * t.uni;
  RealMap grad(probs.height, probs.width);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = gt.values[i], w = weights.values[i];
    grad.values[i] = -w * (g * t.uni - t.inter * (1.0 - g)) / u2;
  }
  return grad;
}

double ppa_loss(const RealMap& logits, const Mask& gt, const PpaOptions& opts) {
  const RealMap w = ppa_weights(gt, opts.kernel);
  return weighted_bce(logits, gt, w) + weighted_iou(sigmoid(logits), gt, w, opts.iou_eps);
}

RealMap ppa_loss_grad(const RealMap& logits, const Mask& gt, const PpaOptions& opts) {
  const RealMap w = ppa_weights(gt, opts.kernel);
  const RealMap p = sigmoid(logits);
  RealMap grad = weighted_bce_grad(logits, gt, w);
  const RealMap d_iou = weighted_iou_grad(p, gt, w, opts.iou_eps);
  for (std::size_t i = 0; i < grad.size(); ++i)
    grad.values[i] += d_iou.values[i] * p.values[i] * (1.0 - p.values[i]);
  return grad;
}

double perception_loss(const RealMap& bg_probs, const Mask& reversed_box) {
  require_same_shape(bg_probs, reversed_box, "perception_loss");
  double fp = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < bg_probs.size(); ++i) {
    if (reversed_box.values[i]) continue;
    fp += bg_probs.values[i];
    ++n;
  }
  if (n == 0) return 0.0;
  const double tn = static_cast<double>(n) - fp;
  return 1.0 - tn / (tn + fp);
}

RealMap perception_loss_grad(const RealMap& bg_probs, const Mask& reversed_box) {
  require_same_shape(bg_probs, reversed_box, "perception_loss_grad");
  std::size_t n = 0;
  for (auto v : reversed_box.values) n += v == 0;
  RealMap grad(bg_probs.height, bg_probs.width);
  if (n == 0) return grad;
  const double g = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!reversed_box.values[i]) grad.values[i] = g;
  return grad;
}

double perception_loss_hard(const RealMap& bg_probs, const Mask& reversed_box, double threshold) {
  require_same_shape(bg_probs, reversed_box, "perception_loss_hard");
  std::size_t tn = 0, fp = 0;
  for (std::size_t i = 0; i < bg_probs.size(); ++i) {
    if (reversed_box.values[i]) continue;
    (bg_probs.values[i] >= threshold ? fp : tn) += 1;
  }
  if (tn + fp == 0) return 0.0;
  return 1.0 - static_cast<double>(tn) / static_cast<double>(tn + fp);
}

SampleLoss sample_loss(const ModelOutput& out, const BranchTargets& targets, const LossOptions& opts,
                       bool with_grad) {
  SampleLoss s;
  if (targets.seg) {
    s.ppa_seg = ppa_loss(out.seg_logits, *targets.seg, opts.ppa);
    if (with_grad) s.seg_grad_ppa = ppa_loss_grad(out.seg_logits, *targets.seg, opts.ppa);
  }
  if (targets.aux) {
    if (!out.has_aux()) throw std::invalid_argument("sample_loss: background target given but model has no background branch");
    s.ppa_aux = ppa_loss(out.bg_logits, *targets.aux, opts.ppa);
    if (with_grad) s.bg_grad_ppa = ppa_loss_grad(out.bg_logits, *targets.aux, opts.ppa);
    if (opts.perception) {
      const RealMap p = sigmoid(out.bg_logits);
      s.percept_aux = perception_loss(p, *targets.aux);
      if (with_grad) {
        RealMap g = perception_loss_grad(p, *targets.aux);
        for (std::size_t i = 0; i < g.size(); ++i) g.values[i] *= p.values[i] * (1.0 - p.values[i]);
        s.bg_grad_percept = std::move(g);
      }
    }
  }
  return s;
}

LossReport aggregate(std::span<const SampleLoss> losses) {
  LossReport r;
  for (const auto& s : losses) {
    if (s.ppa_seg) r.ppa_seg += *s.ppa_seg, ++r.n_seg;
    if (s.ppa_aux) r.ppa_aux += *s.ppa_aux, ++r.n_aux;
    if (s.percept_aux) r.percept_aux += *s.percept_aux, ++r.n_percept;
  }
  if (r.n_seg) r.ppa_seg /= r.n_seg;
  if (r.n_aux) r.ppa_aux /= r.n_aux;
  if (r.n_percept) r.percept_aux /= r.n_percept;
  r.total = r.ppa_seg + r.ppa_aux + r.percept_aux;
  return r;
}

LossReport total_loss(std::span<const ModelOutput> outputs, std::span<const BranchTargets> targets,
                      const LossOptions& opts) {
  if (outputs.size() != targets.size()) throw std::invalid_argument("total_loss: outputs/targets size mismatch");
  bool any = false;
  for (const auto& t : targets) any |= t.seg.has_value() || t.aux.has_value();
  if (!any) throw std::invalid_argument("total_loss: batch has no labels");
  std::vector<SampleLoss> per_sample;
  per_sample.reserve(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i)
    per_sample.push_back(sample_loss(outputs[i], targets[i], opts, false));
  return aggregate(per_sample);
}

}  // namespace hybridseg

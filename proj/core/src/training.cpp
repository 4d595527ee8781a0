#include "hybridseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hybridseg/parallel.hpp"

namespace hybridseg {

TrainConfig desk_train_config() {
  TrainConfig cfg;
  cfg.lr_init = 1e-3;
  cfg.epochs = 15;
  cfg.resolution = 64;
  cfg.net.stage_widths = {16, 32, 64, 128};
  return cfg;
}

void validate(const TrainConfig& cfg) {
  const auto fail = [](const std::string& field, const std::string& msg) {
    throw std::invalid_argument(field + ": " + msg);
  };
  if (!(cfg.lr_init > 0)) fail("lr_init", "must be > 0");
  if (cfg.epochs < 1) fail("epochs", "must be >= 1");
  if (!(cfg.power >= 0)) fail("power", "must be >= 0");
  if (cfg.batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(cfg.strong_fraction >= 0 && cfg.strong_fraction <= 1)) fail("strong_fraction", "must lie in [0, 1]");
  if (cfg.mode != Mode::ours && (cfg.ablate_fd || cfg.ablate_spm || cfg.ablate_pl))
    fail("mode", "ablations are only valid with mode 'ours'");
  if (cfg.mode == Mode::strong_only && cfg.strong_fraction == 0) fail("strong_fraction", "strong_only needs > 0");
  if (cfg.ppa_kernel < 0 || (cfg.ppa_kernel > 0 && cfg.ppa_kernel % 2 == 0)) fail("ppa_kernel", "must be 0 or odd");
  if (!(cfg.iou_eps >= 0)) fail("iou_eps", "must be >= 0");
  if (!(cfg.eval_threshold > 0 && cfg.eval_threshold < 1)) fail("eval_threshold", "must lie in (0, 1)");
  if (cfg.net.ablate_fd || cfg.net.ablate_spm || !cfg.net.aux_branch || cfg.net.init_seed != 0)
    fail("net", "ablate_fd / ablate_spm / aux_branch / init_seed are derived from mode, ablation flags and seed");
  validate(effective_net_config(cfg));
  const int factor = 1 << cfg.net.stage_widths.size();
  if (cfg.resolution < 16 || cfg.resolution % factor != 0)
    fail("resolution", "must be >= 16 and divisible by " + std::to_string(factor));
}

NetConfig effective_net_config(const TrainConfig& cfg) {
  NetConfig net = cfg.net;
  net.aux_branch = cfg.mode == Mode::ours;
  net.ablate_fd = cfg.ablate_fd;
  net.ablate_spm = cfg.ablate_spm;
  net.init_seed = cfg.seed;
  if (!net.aux_branch) {
    net.bottleneck_only = false;
    net.detach_uncertainty = false;
  }
  return net;
}

int effective_ppa_kernel(const TrainConfig& cfg) {
  if (cfg.ppa_kernel > 0) return cfg.ppa_kernel;
  int k = static_cast<int>(std::ceil(31.0 * cfg.resolution / 352.0 - 1e-9));
  if (k % 2 == 0) ++k;
  return std::max(k, 3);
}

LossOptions loss_options(const TrainConfig& cfg) {
  LossOptions o;
  o.ppa.kernel = effective_ppa_kernel(cfg);
  o.ppa.iou_eps = cfg.iou_eps;
  o.perception = !cfg.ablate_pl;
  return o;
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::strong_only: return "strong_only";
    case Mode::weak_only: return "weak_only";
    case Mode::vanilla_hybrid: return "vanilla_hybrid";
    case Mode::ours: return "ours";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "strong_only") return Mode::strong_only;
  if (s == "weak_only") return Mode::weak_only;
  if (s == "vanilla_hybrid") return Mode::vanilla_hybrid;
  if (s == "ours") return Mode::ours;
  throw std::invalid_argument("unknown mode '" + s + "' (expected strong_only, weak_only, vanilla_hybrid, ours)");
}

std::string method_label(const TrainConfig& cfg) {
  switch (cfg.mode) {
    case Mode::strong_only: return "Strong-Only";
    case Mode::weak_only: return "Weak-Only";
    case Mode::vanilla_hybrid: return "Vanilla-Hybrid";
    case Mode::ours: break;
  }
  std::vector<std::string> off;
  if (cfg.ablate_fd) off.push_back("FD");
  if (cfg.ablate_spm) off.push_back("SPM");
  if (cfg.ablate_pl) off.push_back("PL");
  if (off.empty()) return "Ours";
  std::string label = "Ours (w/o ";
  for (std::size_t i = 0; i < off.size(); ++i) label += (i ? "+" : "") + off[i];
  return label + ")";
}

std::pair<double, double> supervision_percentages(const TrainConfig& cfg) {
  const double strong = cfg.strong_fraction * 100.0;
  switch (cfg.mode) {
    case Mode::strong_only: return {strong, 0.0};
    case Mode::weak_only: return {0.0, 100.0};
    default: return {strong, 100.0 - strong};
  }
}

double poly_lr(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch > cfg.epochs)
    throw std::out_of_range("poly_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.epochs) + "]");
  return cfg.lr_init * std::pow(1.0 - static_cast<double>(epoch) / cfg.epochs, cfg.power);
}

double scheduled_lr(int epoch, const TrainConfig& cfg) {
  if (cfg.lr_schedule == LrSchedule::constant) return cfg.lr_init;
  return poly_lr(epoch, cfg);
}

DatasetSplit make_splits(const std::vector<Sample>& samples, const TrainConfig& cfg) {
  const std::size_t n = samples.size();
  if (n < 10) throw std::invalid_argument("make_splits: need at least 10 samples, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t n_train = (4 * n + 2) / 5;
  const auto n_strong =
      static_cast<std::size_t>(std::ceil(cfg.strong_fraction * static_cast<double>(n_train) - 1e-9));

  DatasetSplit split;
  split.seed = cfg.seed;
  for (std::size_t k = n_train; k < n; ++k) {
    Sample s = samples[order[k]];
    if (!s.strong_mask) throw std::invalid_argument("make_splits: test sample " + s.id + " has no mask");
    s.supervision = Supervision::strong;
    split.test.push_back(std::move(s));
  }
  for (std::size_t k = 0; k < n_train; ++k) {
    Sample s = samples[order[k]];
    if (!s.box && s.strong_mask) s.box = box_from_mask(*s.strong_mask);
    if (split.train_strong.size() < n_strong && s.strong_mask) {
      s.supervision = Supervision::strong;
      split.train_strong.push_back(std::move(s));
    } else {
      s.strong_mask.reset();
      s.supervision = Supervision::weak;
      split.train_weak.push_back(std::move(s));
    }
  }
  if (split.train_strong.size() < n_strong)
    throw std::invalid_argument("make_splits: not enough masked training samples for strong_fraction");
  return split;
}

std::optional<BranchTargets> training_targets(const Sample& s, Mode mode) {
  const bool strong = s.supervision == Supervision::strong;
  if (strong && !s.strong_mask) throw std::invalid_argument("training_targets: strong sample " + s.id + " has no mask");
  const auto require_box = [&]() -> const BoundingBox& {
    if (!s.box) throw std::invalid_argument("training_targets: sample " + s.id + " has no box");
    return *s.box;
  };
  BranchTargets t;
  switch (mode) {
    case Mode::ours:
      if (strong) t.seg = *s.strong_mask;
      t.aux = reversed_box_mask(require_box(), s.height(), s.width());
      return t;
    case Mode::strong_only:
      if (!strong) return std::nullopt;
      t.seg = *s.strong_mask;
      return t;
    case Mode::weak_only:
      t.seg = box_fill_mask(require_box(), s.height(), s.width());
      return t;
    case Mode::vanilla_hybrid:
      t.seg = strong ? *s.strong_mask : box_fill_mask(require_box(), s.height(), s.width());
      return t;
  }
  return std::nullopt;
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ParameterSet<T>& params) {
  AdamState<T> s;
  for (const auto& e : params.entries) {
    s.m.emplace_back(e.values.size(), T(0));
    s.v.emplace_back(e.values.size(), T(0));
  }
  return s;
}

template <typename T>
void AdamState<T>::update(ParameterSet<T>& params, const Gradients<T>& grads, double lr) {
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  const T b1 = T(beta1), b2 = T(beta2), lr_t = T(lr), e = T(eps);
  const T inv_c1 = T(1.0 / c1), inv_c2 = T(1.0 / c2);
  for (std::size_t p = 0; p < params.entries.size(); ++p) {
    auto& w = params.entries[p].values;
    const auto& g = grads[p];
    auto& mp = m[p];
    auto& vp = v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      mp[i] = b1 * mp[i] + (T(1) - b1) * g[i];
      vp[i] = b2 * vp[i] + (T(1) - b2) * g[i] * g[i];
      w[i] -= lr_t * (mp[i] * inv_c1) / (std::sqrt(vp[i] * inv_c2) + e);
    }
  }
}

namespace {

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw std::invalid_argument("corrupt rng state");
  return rng;
}

}  // namespace

template <typename T>
TrainState<T> initial_state(const TrainConfig& cfg) {
  validate(cfg);
  Network<T> net(effective_net_config(cfg));
  auto adam = AdamState<T>::zeros_like(net.parameters());
  return TrainState<T>{std::move(net), std::move(adam), 0, 0, rng_to_string(Rng(cfg.seed)), 0};
}

std::string format_step_line(std::uint64_t step, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g", static_cast<unsigned long long>(step), r.ppa_seg,
                r.ppa_aux, r.percept_aux, r.total);
  return buf;
}

std::string format_epoch_line(int epoch, double lr, double dice_pct, double sm_pct) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "epoch,%d,%.17g,%.17g,%.17g", epoch, lr, dice_pct, sm_pct);
  return buf;
}

template <typename T>
Predictor make_predictor(const Network<T>& net) {
  return [&net](const Sample& s) { return sigmoid(net.forward(s.image).seg_logits); };
}

template <typename T>
FitResult<T> fit(const DatasetSplit& split, const TrainConfig& cfg, const FitOptions<T>& opts) {
  validate(cfg);
  FitResult<T> result{opts.resume ? *opts.resume : initial_state<T>(cfg), {}, {}, {}};
  TrainState<T>& state = result.state;
  if (state.net.config() != effective_net_config(cfg))
    throw std::invalid_argument("fit: resume state network configuration does not match config");
  Rng rng = rng_from_string(state.rng_state);
  const LossOptions loss_opts = loss_options(cfg);

  // Training pool: every sample with at least one target under the mode.
  std::vector<const Sample*> pool;
  for (const auto* list : {&split.train_strong, &split.train_weak})
    for (const auto& s : *list)
      if (training_targets(s, cfg.mode)) pool.push_back(&s);
  if (pool.empty()) throw std::invalid_argument("fit: no training samples are eligible under mode " + to_string(cfg.mode));

  const auto emit = [&](std::string line) {
    if (opts.on_log) opts.on_log(line);
    result.log.push_back(std::move(line));
    ++state.log_lines;
  };

  EvalConfig eval_cfg;
  eval_cfg.resolution = cfg.resolution;
  eval_cfg.threshold = cfg.eval_threshold;
  eval_cfg.native = cfg.eval_native;
  eval_cfg.threads = opts.threads;

  const int last_epoch = opts.stop_after_epoch >= 0 ? std::min(opts.stop_after_epoch, cfg.epochs) : cfg.epochs;
  for (int epoch = state.epochs_done; epoch < last_epoch; ++epoch) {
    const double lr = scheduled_lr(epoch, cfg);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_total = 0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      std::vector<Sample> batch;
      std::vector<BranchTargets> targets;
      for (std::size_t k = 0; k < count; ++k) {
        const Sample& src = *pool[order[start + k]];
        const FlipChoice flips = cfg.augment ? draw_flips(rng) : FlipChoice{};
        batch.push_back(resize_sample(apply_flips(src, flips), cfg.resolution));
        targets.push_back(*training_targets(batch.back(), cfg.mode));
      }
      int n_seg = 0, n_aux = 0;
      for (const auto& t : targets) n_seg += t.seg.has_value(), n_aux += t.aux.has_value();
      const int n_percept = loss_opts.perception ? n_aux : 0;

      std::vector<SampleLoss> losses(count);
      std::vector<Gradients<T>> grads(count);
      parallel_for(count, opts.threads, [&](std::size_t k) {
        ForwardCache<T> cache;
        const ModelOutput out = state.net.forward(batch[k].image, cache);
        losses[k] = sample_loss(out, targets[k], loss_opts, true);
        const SampleLoss& l = losses[k];
        RealMap seg_grad(out.seg_logits.height, out.seg_logits.width);
        if (l.ppa_seg)
          for (std::size_t i = 0; i < seg_grad.size(); ++i) seg_grad.values[i] = l.seg_grad_ppa.values[i] / n_seg;
        RealMap bg_grad;
        if (out.has_aux()) {
          bg_grad = RealMap(out.bg_logits.height, out.bg_logits.width);
          if (l.ppa_aux)
            for (std::size_t i = 0; i < bg_grad.size(); ++i) bg_grad.values[i] += l.bg_grad_ppa.values[i] / n_aux;
          if (l.percept_aux)
            for (std::size_t i = 0; i < bg_grad.size(); ++i)
              bg_grad.values[i] += l.bg_grad_percept.values[i] / n_percept;
        }
        grads[k] = state.net.zero_gradients();
        state.net.backward(cache, seg_grad, out.has_aux() ? &bg_grad : nullptr, grads[k]);
      });

      const LossReport report = aggregate(losses);
      if (!std::isfinite(report.total)) {
        throw std::runtime_error("divergence: non-finite total loss at step " + std::to_string(state.global_step + 1));
      }
      Gradients<T>& total = grads[0];
      for (std::size_t k = 1; k < count; ++k)
        for (std::size_t p = 0; p < total.size(); ++p)
          for (std::size_t i = 0; i < total[p].size(); ++i) total[p][i] += grads[k][p][i];
      state.adam.update(state.net.parameters(), total, lr);
      ++state.global_step;
      emit(format_step_line(state.global_step, report));
      epoch_total += report.total;
      ++epoch_steps;
    }
    result.epoch_mean_total.push_back(epoch_total / epoch_steps);

    state.epochs_done = epoch + 1;
    state.rng_state = rng_to_string(rng);
    if (opts.eval_each_epoch && !split.test.empty()) {
      result.test = evaluate_dataset(make_predictor(state.net), split.test, eval_cfg);
      emit(format_epoch_line(state.epochs_done, lr, result.test.mean_dice, result.test.mean_sm));
    }
    if (opts.on_epoch) opts.on_epoch(state);
  }
  if (!split.test.empty() && result.test.per_sample.empty()) {
    result.test = evaluate_dataset(make_predictor(state.net), split.test, eval_cfg);
  }
  return result;
}

AnyNetwork load_network(const CheckpointRecord& record) {
  if (record.precision == Precision::float64) return restore_state<double>(record).net;
  return restore_state<float>(record).net;
}

Predictor make_predictor(const AnyNetwork& net) {
  return std::visit([](const auto& n) { return make_predictor(n); }, net);
}

template struct AdamState<float>;
template struct AdamState<double>;
template TrainState<float> initial_state<float>(const TrainConfig&);
template TrainState<double> initial_state<double>(const TrainConfig&);
template FitResult<float> fit<float>(const DatasetSplit&, const TrainConfig&, const FitOptions<float>&);
template FitResult<double> fit<double>(const DatasetSplit&, const TrainConfig&, const FitOptions<double>&);
template Predictor make_predictor<float>(const Network<float>&);
template Predictor make_predictor<double>(const Network<double>&);

}  // namespace hybridseg

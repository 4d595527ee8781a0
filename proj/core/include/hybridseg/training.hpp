#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "hybridseg/data.hpp"
#include "hybridseg/losses.hpp"
#include "hybridseg/metrics.hpp"
#include "hybridseg/network.hpp"

namespace hybridseg {

enum class Mode { strong_only, weak_only, vanilla_hybrid, ours };
enum class LrSchedule { poly, constant };
enum class Precision { float32, float64 };

struct TrainConfig {
  double lr_init = 1e-4;
  int epochs = 50;
  double power = 0.9;
  int batch_size = 8;
  int resolution = 352;
  double strong_fraction = 0.10;
  Mode mode = Mode::ours;
  bool ablate_fd = false;
  bool ablate_spm = false;
  bool ablate_pl = false;
  std::uint64_t seed = 0;
  NetConfig net;

  LrSchedule lr_schedule = LrSchedule::poly;
  bool augment = true;
  /// Pixel-position-aware pooling kernel; 0 scales 31 @ 352 px to the training resolution.
  int ppa_kernel = 0;
  double iou_eps = 1.0;
  Precision precision = Precision::float32;
  double eval_threshold = 0.5;
  /// Score test predictions at ground-truth resolution.
  bool eval_native = true;
  /// Dataset directory and display name used in result rows.
  std::string dataset;
  std::string dataset_name;
  std::string output_dir;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// 64 x 64, 15 epochs, widths [16,32,64,128], lr 1e-3.
TrainConfig desk_train_config();

/// Throws std::invalid_argument naming the offending field.
void validate(const TrainConfig& cfg);

/// Network configuration implied by the mode, ablation switches and seed.
NetConfig effective_net_config(const TrainConfig& cfg);
int effective_ppa_kernel(const TrainConfig& cfg);
LossOptions loss_options(const TrainConfig& cfg);

std::string to_string(Mode mode);
Mode parse_mode(const std::string& s);
/// Row label, e.g. "Ours", "Ours (w/o FD)", "Vanilla-Hybrid".
std::string method_label(const TrainConfig& cfg);
/// Percentages of the training set with strong / weak labels as used by the mode.
std::pair<double, double> supervision_percentages(const TrainConfig& cfg);

/// lr_init * (1 - epoch / epochs)^power.
double poly_lr(int epoch, const TrainConfig& cfg);
/// poly_lr, or lr_init for the constant schedule.
double scheduled_lr(int epoch, const TrainConfig& cfg);

/// Seeded 80/20 train/test split; ceil(strong_fraction * n_train) training samples keep their masks.
DatasetSplit make_splits(const std::vector<Sample>& samples, const TrainConfig& cfg);

/// Supervision for each branch under a mode; nullopt means the sample is excluded from training.
std::optional<BranchTargets> training_targets(const Sample& sample, Mode mode);

template <typename T>
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;
  std::vector<std::vector<T>> m, v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParameterSet<T>& params);
  void update(ParameterSet<T>& params, const Gradients<T>& grads, double lr);
};

template <typename T>
struct TrainState {
  Network<T> net;
  AdamState<T> adam;
  int epochs_done = 0;
  std::uint64_t global_step = 0;
  /// Serialized std::mt19937_64 driving shuffles and flips.
  std::string rng_state;
  std::uint64_t log_lines = 0;
};

template <typename T>
TrainState<T> initial_state(const TrainConfig& cfg);

template <typename T>
struct FitOptions {
  std::function<void(const std::string&)> on_log;
  std::function<void(const TrainState<T>&)> on_epoch;
  const TrainState<T>* resume = nullptr;
  int threads = 1;
  /// Score the test split after every epoch (emits one epoch line each).
  bool eval_each_epoch = true;
  /// Stop after this many epochs in total (for interrupted-run tests); -1 runs to cfg.epochs.
  int stop_after_epoch = -1;
};

template <typename T>
struct FitResult {
  TrainState<T> state;
  std::vector<std::string> log;
  std::vector<double> epoch_mean_total;
  MetricsReport test;
};

/// Divergence raises std::runtime_error("divergence: ...").
template <typename T>
FitResult<T> fit(const DatasetSplit& split, const TrainConfig& cfg, const FitOptions<T>& opts = {});

std::string format_step_line(std::uint64_t step, const LossReport& r);
std::string format_epoch_line(int epoch, double lr, double dice_pct, double sm_pct);

template <typename T>
Predictor make_predictor(const Network<T>& net);

// Checkpoints

struct NamedBlob {
  std::string name;
  std::vector<int> shape;
  std::vector<unsigned char> bytes;
};

struct CheckpointRecord {
  TrainConfig config;
  int epoch = 0;
  std::uint64_t global_step = 0;
  std::string rng_state;
  std::uint64_t metrics_log_offset = 0;
  Precision precision = Precision::float32;
  /// Network parameters followed by "adam.m/<name>" and "adam.v/<name>" moments.
  std::vector<NamedBlob> tensors;
  std::uint64_t adam_step = 0;
};

template <typename T>
void save_checkpoint(const TrainState<T>& state, const TrainConfig& cfg, const std::filesystem::path& path);

CheckpointRecord load_checkpoint(const std::filesystem::path& path);

/// Rebuilds network and optimizer state. Throws if the stored network configuration differs from
/// `expected` (when given), if the precision differs from T, or if any tensor is missing or misshapen.
template <typename T>
TrainState<T> restore_state(const CheckpointRecord& record, const std::optional<NetConfig>& expected = std::nullopt);

using AnyNetwork = std::variant<Network<float>, Network<double>>;
AnyNetwork load_network(const CheckpointRecord& record);
Predictor make_predictor(const AnyNetwork& net);

}  // namespace hybridseg

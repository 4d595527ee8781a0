#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>
#include <set>

#include "hybridseg/cli.hpp"
#include "hybridseg/config.hpp"
#include "hybridseg/parallel.hpp"

#ifndef HYBRIDSEG_REVISION
#define HYBRIDSEG_REVISION "unknown"
#endif

namespace hybridseg::cli {
namespace fs = std::filesystem;
using nlohmann::json;

json RunManifest::to_json() const {
  return {{"command", command},       {"config_path", config_path}, {"output_dir", output_dir},
          {"started_at", started_at}, {"finished_at", finished_at}, {"revision", revision},
          {"seed", seed},             {"status", status}};
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string source_revision() { return HYBRIDSEG_REVISION; }

void write_manifest(const RunManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << manifest.to_json().dump(2) << '\n';
}

Mask contour(const Mask& mask) {
  Mask out(mask.height, mask.width);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      const bool edge = (r > 0 && !mask.at(r - 1, c)) || (r + 1 < mask.height && !mask.at(r + 1, c)) ||
                        (c > 0 && !mask.at(r, c - 1)) || (c + 1 < mask.width && !mask.at(r, c + 1));
      out.at(r, c) = edge;
    }
  }
  return out;
}

Rgb8Image render_overlay(const GrayImage& image, const Mask& gt, const Mask& pred) {
  require_same_shape(image, gt, "overlay ground truth");
  require_same_shape(image, pred, "overlay prediction");
  const Mask gt_edge = contour(gt);
  const Mask pred_edge = contour(pred);
  Rgb8Image out{image.height, image.width, std::vector<std::array<std::uint8_t, 3>>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i) {
    const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(image.values[i], 0.0, 1.0) * 255.0));
    const bool blue = gt_edge.values[i], red = pred_edge.values[i];
    if (blue || red)
      out.pixels[i] = {static_cast<std::uint8_t>(red ? 255 : 0), 0, static_cast<std::uint8_t>(blue ? 255 : 0)};
    else
      out.pixels[i] = {g, g, g};
  }
  return out;
}

namespace {

void require_flag(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError(flag, "required");
}

fs::path require_dataset_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("dataset", "required (config field or --dataset)");
  if (!fs::is_directory(dir)) throw ConfigError("dataset", "no such directory: " + dir);
  return dir;
}

std::string dataset_label(const std::string& name, const std::string& dir) {
  if (!name.empty()) return name;
  fs::path p = fs::path(dir).lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

void check_split(const std::string& split) {
  if (split != "test" && split != "all") throw ConfigError("split", "expected 'test' or 'all', got '" + split + "'");
}

TrainConfig load_train_config(const Args& a) {
  require_flag(a.config, "config");
  json j = read_json_file(a.config);
  TrainConfig cfg = train_config_from_json(j);
  if (!a.dataset.empty()) cfg.dataset = a.dataset;
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.seed) cfg.seed = *a.seed;
  validate(cfg);
  return cfg;
}

RunManifest start_manifest(const std::string& command, const Args& a, const fs::path& out_dir, json seed) {
  RunManifest m;
  m.command = command;
  m.config_path = a.config;
  m.output_dir = out_dir.string();
  m.started_at = utc_now();
  m.revision = source_revision();
  m.seed = std::move(seed);
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& path) {
  m.finished_at = utc_now();
  m.status = "ok";
  write_manifest(m, path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct LoadedModel {
  std::unique_ptr<AnyNetwork> net;
  TrainConfig cfg;
  bool oracle = false;
  Predictor predict;
  /// Resolution the predictor runs at; 0 means native.
  int resolution = 0;
};

LoadedModel load_model(const std::string& checkpoint) {
  LoadedModel m;
  if (checkpoint == kOracleCheckpoint) {
    m.cfg = desk_train_config();
    m.oracle = true;
    m.predict = [](const Sample& s) {
      if (!s.strong_mask) throw std::invalid_argument("oracle: sample " + s.id + " has no mask");
      RealMap p(s.height(), s.width());
      for (std::size_t i = 0; i < p.size(); ++i) p.values[i] = s.strong_mask->values[i];
      return p;
    };
    return m;
  }
  if (!fs::is_regular_file(checkpoint)) throw ConfigError("checkpoint", "no such file: " + checkpoint);
  const CheckpointRecord rec = load_checkpoint(checkpoint);
  m.cfg = rec.config;
  m.net = std::make_unique<AnyNetwork>(load_network(rec));
  m.predict = make_predictor(*m.net);
  m.resolution = m.cfg.resolution;
  return m;
}

std::vector<Sample> select_samples(std::vector<Sample> all, const TrainConfig& cfg, const std::string& split) {
  if (split == "all") return all;
  return make_splits(all, cfg).test;
}

TrainConfig model_split_config(const LoadedModel& m, const Args& a) {
  TrainConfig cfg = m.cfg;
  if (a.seed) cfg.seed = *a.seed;
  return cfg;
}

std::string result_row(const std::string& method, const TrainConfig& cfg, const std::string& dataset,
                       const MetricsReport& r) {
  const auto [strong, weak] = supervision_percentages(cfg);
  return format_result_row(method, strong, weak, dataset, r.mean_dice, r.mean_sm);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

template <typename T>
void train_impl(const TrainConfig& cfg, const DatasetSplit& split, const std::optional<CheckpointRecord>& resume,
                const fs::path& out) {
  const fs::path log_path = out / "metrics.log";
  std::optional<TrainState<T>> resumed;
  std::vector<std::string> kept;
  if (resume) {
    resumed = restore_state<T>(*resume, effective_net_config(cfg));
    kept = read_lines(log_path);
    if (kept.size() < resume->metrics_log_offset)
      throw std::runtime_error("resume: " + log_path.string() + " has fewer lines than the checkpoint recorded");
    kept.resize(resume->metrics_log_offset);
  }
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  for (const auto& line : kept) log << line << '\n';

  FitOptions<T> opts;
  opts.threads = worker_count();
  opts.resume = resumed ? &*resumed : nullptr;
  opts.on_log = [&](const std::string& line) { log << line << '\n' << std::flush; };
  opts.on_epoch = [&](const TrainState<T>& s) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", s.epochs_done);
    save_checkpoint(s, cfg, out / "checkpoints" / name);
  };
  const FitResult<T> result = fit<T>(split, cfg, opts);
  save_checkpoint(result.state, cfg, out / "final.ckpt");
  const std::string dataset = dataset_label(cfg.dataset_name, cfg.dataset);
  write_text(out / "results.csv",
             std::string(kResultsHeader) + "\n" + result_row(method_label(cfg), cfg, dataset, result.test) + "\n");
}

template <typename T>
MetricsReport fit_and_score(const DatasetSplit& split, const TrainConfig& cfg, const fs::path& log_path) {
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  FitOptions<T> opts;
  opts.threads = worker_count();
  opts.on_log = [&](const std::string& line) { log << line << '\n'; };
  return fit<T>(split, cfg, opts).test;
}

}  // namespace

void cmd_synth_gen(const Args& a) {
  require_flag(a.out, "out");
  SynthConfig cfg;
  if (!a.config.empty()) cfg = synth_config_from_json(read_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  validate(cfg);

  const fs::path out = a.out;
  RunManifest manifest = start_manifest("synth-gen", a, out, cfg.seed);
  write_manifest(manifest, out / "manifest.json");
  save_dataset(synthesize_corpus(cfg), out);
  write_text(out / "synth_config.json", to_json(cfg).dump(2) + "\n");
  finish_manifest(manifest, out / "manifest.json");
}

void cmd_train(const Args& a) {
  const TrainConfig cfg = load_train_config(a);
  require_dataset_dir(cfg.dataset);
  if (cfg.output_dir.empty()) throw ConfigError("output_dir", "required (config field or --out)");
  std::optional<CheckpointRecord> resume;
  if (!a.resume.empty()) {
    if (!fs::is_regular_file(a.resume)) throw ConfigError("resume", "no such file: " + a.resume);
    resume = load_checkpoint(a.resume);
    TrainConfig stored = resume->config, wanted = cfg;
    stored.output_dir.clear();
    wanted.output_dir.clear();
    if (stored != wanted) throw ConfigError("resume", "checkpoint was written under a different configuration");
  }

  const fs::path out = cfg.output_dir;
  RunManifest manifest = start_manifest("train", a, out, cfg.seed);
  write_manifest(manifest, out / "manifest.json");
  write_text(out / "config.json", to_json(cfg).dump(2) + "\n");

  const DatasetSplit split = make_splits(load_dataset(cfg.dataset), cfg);
  if (cfg.precision == Precision::float64)
    train_impl<double>(cfg, split, resume, out);
  else
    train_impl<float>(cfg, split, resume, out);
  finish_manifest(manifest, out / "manifest.json");
}

void cmd_eval(const Args& a) {
  require_flag(a.checkpoint, "checkpoint");
  require_flag(a.out, "out");
  check_split(a.split);
  const fs::path dataset_dir = require_dataset_dir(a.dataset);
  const LoadedModel model = load_model(a.checkpoint);
  const TrainConfig split_cfg = model_split_config(model, a);

  const fs::path out = a.out;
  RunManifest manifest = start_manifest("eval", a, out, split_cfg.seed);
  const fs::path manifest_path = out.string() + ".manifest.json";
  write_manifest(manifest, manifest_path);

  const std::vector<Sample> samples = select_samples(load_dataset(dataset_dir), split_cfg, a.split);
  EvalConfig ec;
  ec.resolution = model.resolution;
  ec.threshold = model.cfg.eval_threshold;
  ec.native = model.cfg.eval_native;
  ec.threads = worker_count();
  const MetricsReport report = evaluate_dataset(model.predict, samples, ec);

  const std::string dataset = dataset_label(a.name, a.dataset);
  const std::string row = model.oracle ? format_result_row("Oracle", 100, 0, dataset, report.mean_dice, report.mean_sm)
                                       : result_row(method_label(model.cfg), model.cfg, dataset, report);
  const bool fresh = !fs::exists(out) || fs::file_size(out) == 0;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream csv(out, std::ios::app);
  if (!csv) throw std::runtime_error("cannot write " + out.string());
  if (fresh) csv << kResultsHeader << '\n';
  csv << row << '\n';
  csv.close();
  finish_manifest(manifest, manifest_path);
}

AblateConfig ablate_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "expected an object");
  for (const auto& [key, _] : j.items())
    if (key != "train" && key != "variants" && key != "strong_fractions" && key != "seeds")
      throw ConfigError(key, "unknown field");
  AblateConfig c;
  if (j.contains("train")) {
    try {
      c.train = train_config_from_json(j.at("train"));
    } catch (const ConfigError& e) {
      throw ConfigError("train." + e.field(), std::string(e.what()).substr(e.field().size() + 2));
    }
  }
  const auto read = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError(key, std::string("wrong type (") + e.what() + ")");
    }
  };
  read("variants", c.variants);
  read("strong_fractions", c.strong_fractions);
  read("seeds", c.seeds);
  if (c.variants.empty()) throw ConfigError("variants", "must not be empty");
  if (c.strong_fractions.empty()) throw ConfigError("strong_fractions", "must not be empty");
  if (c.seeds.empty()) throw ConfigError("seeds", "must not be empty");
  for (const auto& v : c.variants) {
    try {
      apply_variant(c.train, v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("variants", e.what());
    }
  }
  for (double f : c.strong_fractions) {
    TrainConfig probe = c.train;
    probe.strong_fraction = f;
    try {
      validate(probe);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("strong_fractions", e.what());
    }
  }
  return c;
}

TrainConfig apply_variant(TrainConfig cfg, const std::string& variant) {
  cfg.ablate_fd = cfg.ablate_spm = cfg.ablate_pl = false;
  if (variant == "ours" || variant == "no_fd" || variant == "no_spm" || variant == "no_pl") {
    cfg.mode = Mode::ours;
    cfg.ablate_fd = variant == "no_fd";
    cfg.ablate_spm = variant == "no_spm";
    cfg.ablate_pl = variant == "no_pl";
  } else {
    try {
      cfg.mode = parse_mode(variant);
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("unknown variant '" + variant +
                                  "' (expected ours, no_fd, no_spm, no_pl, vanilla_hybrid, weak_only, strong_only)");
    }
  }
  return cfg;
}

void cmd_ablate(const Args& a) {
  require_flag(a.config, "config");
  require_flag(a.out, "out");
  AblateConfig ac = ablate_config_from_json(read_json_file(a.config));
  if (!a.dataset.empty()) ac.train.dataset = a.dataset;
  if (a.seed) ac.seeds = {*a.seed};
  ac.train.output_dir = a.out;
  const fs::path dataset_dir = require_dataset_dir(ac.train.dataset);

  const fs::path out = a.out;
  RunManifest manifest = start_manifest("ablate", a, out, ac.seeds);
  write_manifest(manifest, out / "manifest.json");
  fs::create_directories(out / "logs");

  const std::vector<Sample> samples = load_dataset(dataset_dir);
  const std::string dataset = dataset_label(ac.train.dataset_name, ac.train.dataset);
  std::ofstream csv(out / "results.csv", std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + (out / "results.csv").string());
  csv << kAblateHeader << '\n';
  for (const auto& variant : ac.variants) {
    for (double fraction : ac.strong_fractions) {
      double dice_sum = 0, sm_sum = 0;
      TrainConfig cfg;
      for (std::uint64_t seed : ac.seeds) {
        cfg = apply_variant(ac.train, variant);
        cfg.strong_fraction = fraction;
        cfg.seed = seed;
        validate(cfg);
        const DatasetSplit split = make_splits(samples, cfg);
        char log_name[96];
        std::snprintf(log_name, sizeof(log_name), "%s_f%g_s%llu.log", variant.c_str(), fraction,
                      static_cast<unsigned long long>(seed));
        const MetricsReport r = cfg.precision == Precision::float64
                                    ? fit_and_score<double>(split, cfg, out / "logs" / log_name)
                                    : fit_and_score<float>(split, cfg, out / "logs" / log_name);
        dice_sum += r.mean_dice;
        sm_sum += r.mean_sm;
        csv << result_row(method_label(cfg), cfg, dataset, r) << ',' << seed << '\n' << std::flush;
      }
      const auto [strong, weak] = supervision_percentages(cfg);
      const double n = static_cast<double>(ac.seeds.size());
      csv << format_result_row(method_label(cfg), strong, weak, dataset, dice_sum / n, sm_sum / n) << ",mean\n"
          << std::flush;
    }
  }
  csv.close();
  finish_manifest(manifest, out / "manifest.json");
}

void cmd_overlay(const Args& a) {
  require_flag(a.checkpoint, "checkpoint");
  require_flag(a.out, "out");
  check_split(a.split);
  const fs::path dataset_dir = require_dataset_dir(a.dataset);
  const LoadedModel model = load_model(a.checkpoint);
  const TrainConfig split_cfg = model_split_config(model, a);

  const fs::path out = a.out;
  RunManifest manifest = start_manifest("overlay", a, out, split_cfg.seed);
  write_manifest(manifest, out / "manifest.json");

  const std::vector<Sample> samples = select_samples(load_dataset(dataset_dir), split_cfg, a.split);
  for (const auto& s : samples)
    if (!s.strong_mask) throw std::invalid_argument("overlay: sample " + s.id + " has no mask");
  parallel_for(samples.size(), worker_count(), [&](std::size_t i) {
    const Sample& s = samples[i];
    const Sample input = model.resolution > 0 ? resize_sample(s, model.resolution) : s;
    RealMap probs = model.predict(input);
    if (probs.height != s.height() || probs.width != s.width()) probs = resize_bilinear(probs, s.height(), s.width());
    Mask pred(s.height(), s.width());
    for (std::size_t k = 0; k < pred.size(); ++k) pred.values[k] = probs.values[k] >= model.cfg.eval_threshold;
    write_png_rgb(out / (s.id + ".png"), render_overlay(s.image, *s.strong_mask, pred));
  });
  finish_manifest(manifest, out / "manifest.json");
}

}  // namespace hybridseg::cli

#include "hybridseg/config.hpp"

#include <fstream>
#include <set>

namespace hybridseg {
using nlohmann::json;

namespace {

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError(join(prefix, key), "unknown field");
}

template <typename V>
void read(const json& j, const std::string& key, V& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(join(prefix, key), std::string("wrong type (") + e.what() + ")");
  }
}

template <typename V>
void rethrow_as_config_error(V&& fn, const std::string& prefix) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    // Validators report "<field>: <message>".
    const std::string what = e.what();
    const auto colon = what.find(':');
    if (colon == std::string::npos) throw ConfigError(prefix.empty() ? "<root>" : prefix, what);
    throw ConfigError(join(prefix, what.substr(0, colon)), what.substr(colon + 2));
  }
}

}  // namespace

json to_json(const SynthConfig& c) {
  return {{"image_size", c.image_size},
          {"n_samples", c.n_samples},
          {"mass_radius_range", {c.mass_radius_range.first, c.mass_radius_range.second}},
          {"mass_contrast", c.mass_contrast},
          {"texture_scale", c.texture_scale},
          {"seed", c.seed}};
}

json to_json(const NetConfig& c) {
  return {{"stage_widths", c.stage_widths},   {"ablate_fd", c.ablate_fd},
          {"ablate_spm", c.ablate_spm},       {"aux_branch", c.aux_branch},
          {"bottleneck_only", c.bottleneck_only}, {"detach_uncertainty", c.detach_uncertainty},
          {"init_seed", c.init_seed}};
}

json to_json(const TrainConfig& c) {
  return {{"lr_init", c.lr_init},
          {"epochs", c.epochs},
          {"power", c.power},
          {"batch_size", c.batch_size},
          {"resolution", c.resolution},
          {"strong_fraction", c.strong_fraction},
          {"mode", to_string(c.mode)},
          {"ablate_fd", c.ablate_fd},
          {"ablate_spm", c.ablate_spm},
          {"ablate_pl", c.ablate_pl},
          {"seed", c.seed},
          {"net", to_json(c.net)},
          {"lr_schedule", c.lr_schedule == LrSchedule::poly ? "poly" : "constant"},
          {"augment", c.augment},
          {"ppa_kernel", c.ppa_kernel},
          {"iou_eps", c.iou_eps},
          {"precision", c.precision == Precision::float32 ? "float32" : "float64"},
          {"eval_threshold", c.eval_threshold},
          {"eval_native", c.eval_native},
          {"dataset", c.dataset},
          {"dataset_name", c.dataset_name},
          {"output_dir", c.output_dir}};
}

SynthConfig synth_config_from_json(const json& j, const SynthConfig& base) {
  SynthConfig c = base;
  reject_unknown(j, {"image_size", "n_samples", "mass_radius_range", "mass_contrast", "texture_scale", "seed"}, "");
  read(j, "image_size", c.image_size, "");
  read(j, "n_samples", c.n_samples, "");
  if (j.contains("mass_radius_range")) {
    std::vector<double> r;
    read(j, "mass_radius_range", r, "");
    if (r.size() != 2) throw ConfigError("mass_radius_range", "expected [min, max]");
    c.mass_radius_range = {r[0], r[1]};
  }
  read(j, "mass_contrast", c.mass_contrast, "");
  read(j, "texture_scale", c.texture_scale, "");
  read(j, "seed", c.seed, "");
  rethrow_as_config_error([&] { validate(c); }, "");
  return c;
}

namespace {

NetConfig net_from_json(const json& j, const NetConfig& base, const std::string& prefix) {
  NetConfig c = base;
  reject_unknown(j,
                 {"stage_widths", "ablate_fd", "ablate_spm", "aux_branch", "bottleneck_only", "detach_uncertainty",
                  "init_seed"},
                 prefix);
  read(j, "stage_widths", c.stage_widths, prefix);
  read(j, "ablate_fd", c.ablate_fd, prefix);
  read(j, "ablate_spm", c.ablate_spm, prefix);
  read(j, "aux_branch", c.aux_branch, prefix);
  read(j, "bottleneck_only", c.bottleneck_only, prefix);
  read(j, "detach_uncertainty", c.detach_uncertainty, prefix);
  read(j, "init_seed", c.init_seed, prefix);
  return c;
}

}  // namespace

NetConfig net_config_from_json(const json& j, const NetConfig& base) {
  NetConfig c = net_from_json(j, base, "");
  rethrow_as_config_error([&] { validate(c); }, "");
  return c;
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  TrainConfig c = base;
  reject_unknown(j,
                 {"lr_init", "epochs", "power", "batch_size", "resolution", "strong_fraction", "mode", "ablate_fd",
                  "ablate_spm", "ablate_pl", "seed", "net", "lr_schedule", "augment", "ppa_kernel", "iou_eps",
                  "precision", "eval_threshold", "eval_native", "dataset", "dataset_name", "output_dir"},
                 "");
  read(j, "lr_init", c.lr_init, "");
  read(j, "epochs", c.epochs, "");
  read(j, "power", c.power, "");
  read(j, "batch_size", c.batch_size, "");
  read(j, "resolution", c.resolution, "");
  read(j, "strong_fraction", c.strong_fraction, "");
  if (j.contains("mode")) {
    std::string m;
    read(j, "mode", m, "");
    try {
      c.mode = parse_mode(m);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("mode", e.what());
    }
  }
  read(j, "ablate_fd", c.ablate_fd, "");
  read(j, "ablate_spm", c.ablate_spm, "");
  read(j, "ablate_pl", c.ablate_pl, "");
  read(j, "seed", c.seed, "");
  if (j.contains("net")) c.net = net_from_json(j.at("net"), c.net, "net");
  if (j.contains("lr_schedule")) {
    std::string s;
    read(j, "lr_schedule", s, "");
    if (s == "poly")
      c.lr_schedule = LrSchedule::poly;
    else if (s == "constant")
      c.lr_schedule = LrSchedule::constant;
    else
      throw ConfigError("lr_schedule", "expected 'poly' or 'constant', got '" + s + "'");
  }
  read(j, "augment", c.augment, "");
  read(j, "ppa_kernel", c.ppa_kernel, "");
  read(j, "iou_eps", c.iou_eps, "");
  if (j.contains("precision")) {
    std::string s;
    read(j, "precision", s, "");
    if (s == "float32")
      c.precision = Precision::float32;
    else if (s == "float64")
      c.precision = Precision::float64;
    else
      throw ConfigError("precision", "expected 'float32' or 'float64', got '" + s + "'");
  }
  read(j, "eval_threshold", c.eval_threshold, "");
  read(j, "eval_native", c.eval_native, "");
  read(j, "dataset", c.dataset, "");
  read(j, "dataset_name", c.dataset_name, "");
  read(j, "output_dir", c.output_dir, "");
  rethrow_as_config_error([&] { validate(c); }, "");
  return c;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("parse error in ") + path.string() + ": " + e.what());
  }
}

}  // namespace hybridseg

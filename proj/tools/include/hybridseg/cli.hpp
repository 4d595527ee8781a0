#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridseg/data.hpp"
#include "hybridseg/png_io.hpp"
#include "hybridseg/training.hpp"

namespace hybridseg::cli {

/// Flags shared by the subcommands. Empty strings mean "not given".
struct Args {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string dataset;
  std::optional<std::uint64_t> seed;
  std::string split = "test";
  std::string name;
  std::string resume;
};

/// Stand-in checkpoint path that predicts the ground truth.
constexpr const char* kOracleCheckpoint = "@oracle";

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string output_dir;
  std::string started_at;
  std::string finished_at;
  std::string revision;
  nlohmann::json seed;
  std::string status = "running";

  nlohmann::json to_json() const;
};

/// ISO-8601 UTC timestamp.
std::string utc_now();
std::string source_revision();
void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);

/// Foreground pixels with at least one background 4-neighbour; neighbours outside the image are ignored.
Mask contour(const Mask& mask);

/// Grayscale image with the ground-truth contour in blue and the prediction contour in red.
/// Pixels on both contours are magenta.
Rgb8Image render_overlay(const GrayImage& image, const Mask& gt, const Mask& pred);

struct AblateConfig {
  TrainConfig train;
  /// ours, no_fd, no_spm, no_pl, vanilla_hybrid, weak_only, strong_only.
  std::vector<std::string> variants{"ours", "no_fd", "no_spm", "no_pl"};
  std::vector<double> strong_fractions{0.10};
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

AblateConfig ablate_config_from_json(const nlohmann::json& j);
/// Applies a variant name to a base training configuration.
TrainConfig apply_variant(TrainConfig cfg, const std::string& variant);
constexpr const char* kAblateHeader = "method,strong_pct,weak_pct,dataset,dice,sm,seed";

void cmd_synth_gen(const Args& args);
void cmd_train(const Args& args);
void cmd_eval(const Args& args);
void cmd_ablate(const Args& args);
void cmd_overlay(const Args& args);

/// Parses argv, runs the subcommand and maps failures to "error: <field>: <message>" on `err`.
/// Returns 0 on success, 2 for usage and configuration errors, 1 for other failures.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hybridseg::cli

#pragma once

// Staged sharing experiment: contributors arrive one per stage, the server refines and ships
// its map, clients catch up, and every variant is scored on interpolated and extrapolated views.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsshare/bitstream.hpp"
#include "gsshare/metrics.hpp"
#include "gsshare/render.hpp"
#include "gsshare/scenegen.hpp"

namespace gsshare {

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string scene_path;     // scene JSON; empty generates one from `seed`
  int stages = 3;             // one contributor per stage
  int frames_each = 8;        // uploaded frames per contributor
  int eval_positions = 20;
  int eval_rotations = 5;
  int stride = 4;             // pixel stride when lifting RGB-D
  double epsilon = 0.06;
  int anchor_k = kDefaultAnchorK;
  double initial_opacity = 0.1;
  int refine_iters = 12;
  double step_size = 0.1;
  int virtual_views = 8;
  int calibration_frames = 12;
  double hole_threshold = 0.5;
  // Footprint cutoff for training and scoring renders; see RenderOptions.
  double alpha_cutoff = 1.0 / 255.0;
  LossWeights weights;
  // Any of "baseline", "+virt", "+incr".
  std::vector<std::string> variants = {"baseline", "+virt", "+incr"};

  void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ExperimentRow {
  uint32_t stage = 0;
  std::string variant;
  std::string set;  // "interp" or "extrap"
  size_t views = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double depth_l1_cm = 0.0;
  size_t bytes = 0;      // sent for this stage
  size_t cum_bytes = 0;  // sent up to and including this stage
  double compression_ratio = 0.0;      // raw size of this stage's map / bytes
  double cum_compression_ratio = 0.0;  // summed raw sizes / cum_bytes
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;
  std::string csv;
  // Per stage, for the +incr variant: client map after fetching equals the server's.
  std::vector<bool> client_matches_server;
  size_t incr_cum_bytes = 0;  // +incr path
  size_t full_cum_bytes = 0;  // same targets re-sent whole every stage
  GaussianMap final_map;      // last refined target of the virtual-view training mode
  EvalViews eval;
  double seconds = 0.0;

  // Mean PSNR of (variant, set) at `stage`; NaN when absent.
  double psnr(const std::string& variant, const std::string& set, uint32_t stage) const;
};

std::string experiment_csv_header();
std::string experiment_csv_row(const ExperimentRow& r);

// Pseudo ground truth for one stage: virtual map from `frames`, confidence predictor calibrated
// at their poses, virtual poses sampled in the scene's free space.
std::vector<PseudoGT> stage_pseudo_gt(const SyntheticScene& scene, const std::vector<FrameRGBD>& frames,
                                      const ExperimentConfig& cfg, uint32_t stage);

// Refined global-map targets for every stage; stage s ingests inputs[s] and keeps earlier anchors
// as a prefix.
std::vector<GaussianMap> train_stages(const SyntheticScene& scene,
                                      const std::vector<std::vector<FrameRGBD>>& inputs,
                                      const ExperimentConfig& cfg, bool use_virtual);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct RdRow {
  double lambda_q = 0.0;
  double step = 0.0;
  size_t bytes = 0;
  double psnr_db = 0.0;  // extrapolated views
  double compression_ratio = 0.0;
};

// 0.0005, 0.0025, ..., 0.0205.
std::vector<double> default_lambda_schedule();

std::vector<RdRow> rd_sweep(const GaussianMap& map, const std::vector<FrameRGBD>& views,
                            const std::vector<double>& lambdas, const BlockCodecOptions& base = {},
                            const RenderOptions& render_opts = {});
std::string rd_csv(const std::vector<RdRow>& rows);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<Series>& series);

}  // namespace gsshare

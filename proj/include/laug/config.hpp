#pragma once

#include <filesystem>
#include <string>

#include "laug/network_spec.hpp"
#include "laug/optim.hpp"

namespace laug {

// Run configuration shared by every CLI command. One file, sectioned
// `key = value` lines; unknown keys are rejected with their line number and
// every run writes the fully resolved configuration beside its outputs.
struct RunConfig {
  NetworkSpec network;

  // [train]
  OptimConfig optimizer;
  int batch_size = 16;
  std::uint64_t seed = 7;

  // [stage1]
  int stage1_steps = 500;
  double lambda_I = 10.0;
  double sigma_prior = 1.0;

  // [stage2]
  double lambda_II = 1e-3;
  bool lambda_II_relative = true;  // scaled by trace(X X^T)/(Z+1) when true
  bool standardize_codes = false;
  double holdout_fraction = 0.2;

  // [stage3]  (the reconstruction weight is tied to lambda_I)
  int stage3_steps = 500;
  double lambda_feat = 1.0;
  std::string feature_source = "aae";  // "aae" or "cgan"

  // [finetune]
  int finetune_steps = 200;
  OptimConfig finetune_optimizer{OptKind::sgd, 1e-4, 0.5, 0.999, 1e-8};
  int finetune_max_pairs = 64;

  // [data]
  double ssim_lo = 0.4;
  double ssim_hi = 0.98;
  int max_gap = 1;

  // [paths] - optional defaults, overridden by CLI flags
  std::string data_path;
  std::string videos_path;
  std::string images_path;
  std::string out_path;
};

RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");

// deterministic rendering of the fully resolved configuration
std::string render_config(const RunConfig& cfg);

}  // namespace laug

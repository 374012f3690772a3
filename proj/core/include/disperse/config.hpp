#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "disperse/encoder.hpp"
#include "disperse/eval.hpp"
#include "disperse/unlearn.hpp"

namespace disperse::config {

inline constexpr const char* kToolVersion = "0.1.0";

struct DataConfig {
  std::size_t num_identities = 100;
  std::size_t per_identity = 20;
  std::size_t input_dim = 16;
  std::size_t prototype_dim = 0;  // 0 = input_dim
  double noise_std = 0.3;
  std::uint64_t seed = 1;
  std::size_t n_forget = 10;
  double train_frac = 0.5;
  std::size_t distractor_multiplier = 20;
  double duplicate_fraction = 0.0;
};

struct EvalConfig {
  eval::GalleryMode mode = eval::GalleryMode::kBase;
  std::size_t base_distractors = 0;   // 0 = half the pool
  std::size_t extra_distractors = 0;  // 0 = the other half
  std::vector<std::uint64_t> seeds{1, 2, 3};  // forget-set draws
};

struct EncoderConfig {
  std::size_t embed_dim = 32;
  std::vector<std::size_t> hidden{128, 128};
  double scale_s = 64.0;
  double margin_m = 0.4;
};

struct ExperimentConfig {
  DataConfig data;
  EncoderConfig encoder;
  model::TrainConfig train;
  unlearn::UnlearnConfig unlearn;
  EvalConfig eval;
  std::string output_dir = "out";
  std::size_t max_sweep_runs = 256;

  // The unlearn section as written, kept for sweep-grid expansion.
  nlohmann::json unlearn_raw;
};

/// Parses the experiment config. Unknown keys and type mismatches raise
/// std::invalid_argument naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);

/// Canonical JSON echo of the config (sorted keys, every field explicit).
nlohmann::json config_to_json(const ExperimentConfig& c);
nlohmann::json unlearn_to_json(const unlearn::UnlearnConfig& u);
unlearn::UnlearnConfig parse_unlearn(const nlohmann::json& j,
                                     const unlearn::UnlearnConfig& base);

/// FNV-1a over the canonical dump; artifacts embed this for provenance.
std::uint64_t config_hash(const nlohmann::json& canonical);
std::uint64_t config_hash(const ExperimentConfig& c);
std::string hash_hex(std::uint64_t h);

/// Expands list-valued fields of the unlearn section into the cross product
/// of single-valued configs (Appendix-style grids). Scalar-only sections
/// expand to exactly one cell. Throws when the grid exceeds max_runs.
std::vector<unlearn::UnlearnConfig> expand_sweep_grid(
    const nlohmann::json& unlearn_section, const unlearn::UnlearnConfig& base,
    std::size_t max_runs);

}  // namespace disperse::config

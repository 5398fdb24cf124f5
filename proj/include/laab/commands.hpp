#pragma once

// File-level operations behind the command-line tool and the C API.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "laab/features.hpp"
#include "laab/training.hpp"

namespace laab {

// The training config file. Unknown keys are rejected; missing keys keep
// these defaults.
struct TrainConfig {
  std::optional<FeatureKind> feature_kind;
  std::vector<std::size_t> hidden_dims_r;  // empty: default for the feature kind
  std::vector<std::size_t> hidden_dims_j;
  TrainPlan plan;
  LogicLossConfig logic;
  double top_p = 0.85;

  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

TrainConfig load_train_config(const std::filesystem::path& file);

// Loaded checkpoint directory: both detectors plus the saved config.
struct Model {
  Detector d_r;
  Detector d_j;
  nlohmann::json config;
};

void synth_to_dir(const nlohmann::json& config, const std::filesystem::path& out);

features::DeriveOutcome derive_to_dir(const std::filesystem::path& raw,
                                      const std::filesystem::path& out,
                                      const features::DeriveOptions& options);
nlohmann::json derive_summary(const features::DeriveOutcome& outcome);

// Trains throwaway plain probes on each candidate layer's hidden states and
// returns validation macro-F1 per candidate plus the chosen positions.
nlohmann::json select_layer(const std::filesystem::path& raw, const TrainConfig& cfg);

// Writes detector_r.ckpt, detector_j.ckpt, report.json and config.json into
// `out`. A raw pack is derived first (into out/derived) with `feature`.
nlohmann::json train_to_dir(const std::filesystem::path& pack, std::optional<FeatureKind> feature,
                            TrainConfig cfg, const std::filesystem::path& out, bool use_logic);

Model load_model(const std::filesystem::path& ckpt_dir);

// Records of a derived pack, in pack order.
// With a split, records come from partition_pack(pack, seed).
SampleSet load_samples(const FeaturePack& pack, std::optional<Split> only = std::nullopt,
                       std::uint64_t seed = 0);

// One JSON object per record: id, label, s_hallu, s_real.
std::vector<nlohmann::json> predict(const Model& model, const FeaturePack& pack,
                                    InferenceMode mode);

struct Evaluation {
  nlohmann::json report;
  std::string table;
};
// Scores all three inference modes on `split` (all records when empty) with
// a length breakdown for the response path; with a baseline, also the
// correctness transitions from baseline D_r to LaaB D_r.
Evaluation evaluate_model(const Model& model, const FeaturePack& pack,
                          const Model* baseline, std::optional<Split> split);

}  // namespace laab

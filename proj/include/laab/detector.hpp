#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "json.hpp"
#include "laab/autodiff.hpp"
#include "laab/nn.hpp"
#include "laab/pack.hpp"
#include "laab/random.hpp"

namespace laab {

enum class Role { response, judgment };

std::string_view to_string(Role r) noexcept;
Role parse_role(std::string_view s);

struct DetectorConfig {
  FeatureKind feature_kind = FeatureKind::hidden;
  Role role = Role::response;
  std::vector<std::size_t> hidden_dims{256, 128, 64};
  double dropout = 0.1;
  std::uint64_t seed = 0;

  // Token-level logit features on the response side go through the
  // attention aggregator; every other combination is a plain MLP.
  bool uses_aggregator() const {
    return feature_kind == FeatureKind::logits && role == Role::response;
  }
};

// Paper-default layer widths per feature kind and role.
std::vector<std::size_t> default_hidden_dims(FeatureKind kind, Role role);

// A batch of detector inputs: either dense rows [B, D] or padded token
// matrices [B, N_max, width] with the valid length of each sample.
struct FeatureBatch {
  Tensor values;
  std::vector<std::size_t> lengths;  // empty for dense batches

  std::size_t size() const { return values.empty() && lengths.empty() ? 0 : values.dim(0); }
  bool is_tokens() const { return !lengths.empty(); }

  static FeatureBatch dense(std::span<const Tensor* const> rows);
  static FeatureBatch tokens(std::span<const Tensor* const> matrices);
};

struct DetectorOutput {
  ad::Var probs;        // [B, 2]: (S_hallu, S_real)
  ad::Var penultimate;  // input of the final linear layer
};

class Detector {
 public:
  // `input_dim` is the feature width (token width for the aggregator path).
  Detector(DetectorConfig config, std::size_t input_dim);

  // Parameters are shared handles, so copies would alias; use clone().
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;
  Detector(Detector&&) = default;
  Detector& operator=(Detector&&) = default;

  Detector clone() const;

  DetectorOutput forward(const FeatureBatch& batch, bool train_mode);
  // Eval-mode probabilities as a plain tensor.
  Tensor predict_proba(const FeatureBatch& batch) const;

  const DetectorConfig& config() const { return config_; }
  std::size_t input_dim() const { return input_dim_; }
  nn::ParamList& params() { return params_; }
  const nn::ParamList& params() const { return params_; }
  // Weight and bias of the final linear layer.
  std::vector<ad::Var> last_layer() const;

 private:
  DetectorOutput run(const FeatureBatch& batch, bool train_mode, Rng* rng) const;

  DetectorConfig config_;
  std::size_t input_dim_;
  nn::ParamList params_;
  nn::AttentionAggregator aggregator_;
  nn::Mlp mlp_;
  Rng dropout_rng_;
};

// 1 (factual) iff S_real > 0.5; a tie predicts hallucination.
int predict_label(float s_hallu, float s_real);
std::vector<int> predict_labels(const Tensor& probs);

struct BestSnapshot {
  std::vector<Tensor> params;
  double val_loss = std::numeric_limits<double>::infinity();
  std::size_t epoch = 0;
};

struct DetectorState {
  Detector detector;
  nn::AdamW optimizer;
  BestSnapshot best;
  bool frozen = false;

  DetectorState(Detector d, nn::AdamWConfig opt);
  // Records the current parameters when val_loss improves strictly.
  bool offer(double val_loss, std::size_t epoch);
  void revert_to_best();
};

// Single-file checkpoint: u64 little-endian header length, JSON header
// (config, input_dim, parameter names/shapes, metadata), then the parameters
// as little-endian float32 in declaration order.
void save_checkpoint(const Detector& detector, const nlohmann::json& metadata,
                     const std::filesystem::path& file);
struct LoadedDetector {
  Detector detector;
  nlohmann::json metadata;
};
LoadedDetector load_checkpoint(const std::filesystem::path& file);

}  // namespace laab

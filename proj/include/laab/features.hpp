#pragma once

// Turns raw per-sample tensors gathered from a language model into the
// detector inputs: last-token hidden states, layer-wise token probabilities
// and lookback-ratio attention summaries, for both the response and the
// self-judgment generation.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "laab/error.hpp"
#include "laab/labels.hpp"
#include "laab/pack.hpp"
#include "laab/tensor.hpp"

namespace laab::features {

inline constexpr std::size_t kCandidateLayers = 8;
inline constexpr std::size_t kResponseSegments = 4;
inline constexpr std::size_t kJudgmentSegments = 6;

// An attention row with no mass at all. Such samples are dropped.
class DegenerateAttentionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct RawSample {
  std::string id;
  Tensor hidden_r;    // [8, hidden_dim] last-token states at the candidate layers
  Tensor hidden_j;    // [8, hidden_dim]
  Tensor logits_r;    // [n_tokens, layer_count]
  Tensor yes_j;       // [layer_count] summed synonym probabilities
  Tensor no_j;        // [layer_count]
  Tensor seg_attn_r;  // [layer_count*head_count, n_tokens, 4]
  Tensor seg_attn_j;  // [layer_count*head_count, 1, 6]
  Verdict o_j = Verdict::yes;
  int l_r = 0;
  std::size_t n_tokens_r = 0;
};

struct DerivedFeatures {
  Tensor h_r, h_j;  // [hidden_dim]
  Tensor p_r;       // [n_tokens, layer_count]; every row valid
  Tensor p_j;       // [2*layer_count]
  Tensor a_r;       // [|selected|*4]
  Tensor a_j;       // [heads*6] (or selected heads when judgment selection is on)
};

struct HeadSelection {
  Tensor kl_scores;                   // one score per head
  std::vector<std::size_t> selected;  // head indices, highest score first
  double p_threshold = 0.85;
};

enum class KlEstimator { mean_distribution, per_sample };

// 1-based block indices ceil(q*L) for q in {1/8, ..., 8/8}.
std::vector<std::size_t> quantile_layers(std::size_t layer_count);

// Position (0-based) of the best of the 8 candidate scores; ties go to the
// deeper candidate.
std::size_t select_kval(std::span<const double> candidate_scores);

// yes: p_yes ⊕ (p_yes - p_no); no: p_no ⊕ (p_no - p_yes).
Tensor build_p_j(const Tensor& p_yes, const Tensor& p_no, Verdict o_j);

// Normalizes a [heads, anchors, segments] ach2seg map along segments.
Tensor lookback_ratio(const Tensor& seg_attn);

// Averages normalized ratios over anchors: [heads, anchors, seg] -> [heads, seg].
Tensor pool_lookback(const Tensor& token_ratios);

// Per-head symmetrized KL between the pooled lookback distributions of the
// positive (l_r = 1) and negative samples. Inputs are [heads, seg] each.
Tensor kl_head_scores(std::span<const Tensor> positive, std::span<const Tensor> negative,
                      KlEstimator estimator = KlEstimator::mean_distribution);

// Shortest highest-score prefix whose share of the total score reaches p.
HeadSelection select_top_p_heads(const Tensor& scores, double p);

// Fits the head selection on pooled lookback ratios of training samples.
HeadSelection fit_head_selection(std::span<const Tensor> pooled, std::span<const int> labels,
                                 double p, KlEstimator estimator);

struct DeriveSettings {
  std::size_t kval_r = kCandidateLayers - 1;  // candidate position, 0-based
  std::size_t kval_j = kCandidateLayers - 1;
  const HeadSelection* heads_r = nullptr;     // required for a_r
  const HeadSelection* heads_j = nullptr;     // nullptr: every judgment head
};

DerivedFeatures derive(const RawSample& raw, const DeriveSettings& settings);

// ---- pack-level plumbing ---------------------------------------------------

RawSample raw_sample_from_record(const PackRecord& record);
PackRecord record_from_raw_sample(const RawSample& raw);

struct DeriveOptions {
  FeatureKind kind = FeatureKind::hidden;
  double top_p = 0.85;
  bool top_p_judgment = false;
  KlEstimator estimator = KlEstimator::mean_distribution;
  std::size_t kval_r = kCandidateLayers - 1;
  std::size_t kval_j = kCandidateLayers - 1;
  std::uint64_t split_seed = 0;
};

struct DeriveOutcome {
  FeaturePack pack;                    // derived schema, records carry their split
  std::vector<std::string> excluded;   // ids dropped for degenerate attention
  std::optional<HeadSelection> heads_r;
  std::optional<HeadSelection> heads_j;
};

// Splits the raw pack 7:1:2 (unless records already carry a split), fits head
// selection on the training part only, and derives one feature kind.
DeriveOutcome derive_pack(const FeaturePack& raw, const DeriveOptions& options);

}  // namespace laab::features

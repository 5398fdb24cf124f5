#pragma once

// Logic-constrained mutual learning of a response detector D_r and a
// self-judgment detector D_j.
//
// Stage 1 trains both round-robin inside every mini-batch. Each detector
// minimizes  CE + alpha * w * Logic,  where Logic is the Huber distance between
// S_r,hallu and the judgment probability aligned by the verbal verdict, w is
// the confidence-ratio weight and alpha balances last-layer gradient norms.
// A detector whose validation CE stops improving for `patience` epochs is
// reverted to its best snapshot and frozen while the other keeps learning.
// Stage 2 fine-tunes both jointly on CE_r + CE_j + alpha * Logic and keeps
// the pair with the best validation CE_r.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "laab/detector.hpp"
#include "laab/labels.hpp"
#include "laab/pack.hpp"

namespace laab {

struct LogicLossConfig {
  double delta = 0.5;
  double eps = 1e-8;
  double alpha_clamp = 1e4;
  // Off: plain probes trained on cross-entropy only (alpha forced to 0).
  bool enabled = true;
};

struct TrainPlan {
  std::vector<double> lr_grid{1e-4, 5e-4, 1e-3, 5e-3};
  double joint_lr = 1e-6;
  std::size_t batch_size = 128;
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 0;
  double weight_decay = 1e-5;
};

// In-memory aligned view of one split of a derived pack.
struct SampleSet {
  FeatureKind kind = FeatureKind::hidden;
  std::vector<std::string> ids;
  std::vector<Tensor> f_r, f_j;
  std::vector<int> l_r, l_j;
  std::vector<Verdict> o_j;
  std::vector<std::size_t> n_tokens;

  std::size_t size() const { return ids.size(); }
  FeatureBatch batch_r(std::span<const std::size_t> idx) const;
  FeatureBatch batch_j(std::span<const std::size_t> idx) const;
  std::vector<std::size_t> all() const;

  static SampleSet from_pack(const FeaturePack& pack, std::span<const std::size_t> indices);
};

// ---- losses ---------------------------------------------------------------

// Index of the judgment column compared with S_r,hallu: hallu for "yes",
// real for "no".
std::size_t aligned_judgment_column(Verdict o_j);

// Per-sample Huber terms between S_r,hallu and the aligned judgment entry.
ad::Var logic_terms(const ad::Var& s_r, const ad::Var& s_j, std::span<const Verdict> o_j,
                    double delta);
// Batch mean of logic_terms.
ad::Var logic_loss(const ad::Var& s_r, const ad::Var& s_j, std::span<const Verdict> o_j,
                   double delta);
// Batch mean Huber between equal-shaped x and y.
ad::Var huber(const ad::Var& x, const ad::Var& y, double delta);

struct ConfidenceWeights {
  std::vector<double> w_r, w_j;
};
// w_r = log(1 + S_j(l_j)/S_r(l_r)), w_j = log(1 + S_r(l_r)/S_j(l_j)), from
// detached probabilities floored at 1e-12.
ConfidenceWeights confidence_weights(const Tensor& s_r, const Tensor& s_j,
                                     std::span<const int> l_r, std::span<const int> l_j);

double l2_norm(std::span<const ad::Var> vars, bool of_grad = true);

// alpha = |grad CE| / (|grad Logic| + eps), clamped to [0, clamp].
double alpha_from_norms(double ce_norm, double logic_norm, const LogicLossConfig& cfg);

struct AlphaResult {
  double alpha = 0.0;
  double ce_norm = 0.0;
  double logic_norm = 0.0;
};
// Differentiates both losses with respect to `last_layer`. Leaves gradients of
// every reachable parameter dirty; callers zero them before their own update.
AlphaResult adaptive_alpha(const ad::Var& ce, const ad::Var& logic,
                           std::span<ad::Var> last_layer, const LogicLossConfig& cfg);

// ---- training -------------------------------------------------------------

struct EpochRecord {
  int stage = 1;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_ce_r = 0.0, loss_ce_j = 0.0, loss_logic = 0.0;
  double alpha_r = 0.0, alpha_j = 0.0;  // batch means (stage 2: joint alpha in alpha_r)
  double val_ce_r = 0.0, val_ce_j = 0.0;
  bool active_r = false, active_j = false;
};

// One entry per optimizer step that used an adaptive alpha.
struct AlphaTrace {
  int stage = 1;
  std::size_t epoch = 0;
  std::size_t batch = 0;
  Role role = Role::response;  // stage 2 records Role::response for the joint alpha
  double alpha = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<AlphaTrace> alphas;
  double chosen_lr = 0.0;
  std::vector<std::pair<double, double>> lr_search;  // (lr, best val CE_r)
  std::size_t stop_epoch_r = 0, stop_epoch_j = 0;
  double best_val_ce_r = 0.0, best_val_ce_j = 0.0;
  std::size_t stage2_epochs = 0;
  double stage2_best_val_ce_r = 0.0;
  nlohmann::json evaluation = nlohmann::json::object();

  nlohmann::json to_json() const;
};

// Everything an offline replay needs to recompute one alpha independently.
struct BatchObservation {
  int stage = 1;
  std::size_t epoch = 0;
  std::size_t batch = 0;
  Role role = Role::response;
  std::span<const std::size_t> indices;
  const Tensor* probs_r = nullptr;        // [B,2] of D_r in this step's graph
  const Tensor* probs_j = nullptr;        // [B,2] of D_j
  const Tensor* penultimate_r = nullptr;  // input to D_r's final layer (null if unused)
  const Tensor* penultimate_j = nullptr;
  double alpha = 0.0;
};
using BatchObserver = std::function<void(const BatchObservation&)>;

struct DetectorPair {
  DetectorState r;
  DetectorState j;
};

// Fresh, seeded detectors for a sample set. Empty dims select the defaults.
DetectorPair build_pair(const SampleSet& train, std::vector<std::size_t> dims_r,
                        std::vector<std::size_t> dims_j, std::uint64_t seed, double lr,
                        double weight_decay);

double validation_ce(const Detector& d, const SampleSet& set, Role role, std::size_t batch_size);

// Runs stage 1 to completion; both states end at their best snapshots.
void stage1_train(DetectorPair& pair, const SampleSet& train, const SampleSet& val,
                  const TrainPlan& plan, double lr, const LogicLossConfig& cfg,
                  TrainReport& report, const BatchObserver& observer = {});

// Joint fine-tuning at plan.joint_lr; the pair ends at the best (θ_r*, θ_j*).
void stage2_finetune(DetectorPair& pair, const SampleSet& train, const SampleSet& val,
                     const TrainPlan& plan, const LogicLossConfig& cfg, TrainReport& report,
                     const BatchObserver& observer = {});

struct TrainOutcome {
  DetectorPair pair;
  TrainReport report;
};

// Learning-rate grid over stage 1 (picked by best D_r validation CE), then
// stage 2 from the chosen stage-1 result.
TrainOutcome train_laab(const SampleSet& train, const SampleSet& val, const TrainPlan& plan,
                        const LogicLossConfig& cfg, std::vector<std::size_t> dims_r = {},
                        std::vector<std::size_t> dims_j = {});

// ---- inference ------------------------------------------------------------

struct Prediction {
  int label = 0;
  float s_hallu = 0.5f;
  float s_real = 0.5f;
};

// Deployment path: response detector only.
std::vector<Prediction> infer_response(const Detector& d_r, const FeatureBatch& f_r);

// Judgment detector mapped back to the response through the verdict.
std::vector<Prediction> infer_judgment_only(const Detector& d_j, const FeatureBatch& f_j,
                                            std::span<const Verdict> o_j);

// Mean of S_r and the verdict-aligned S_j.
std::vector<Prediction> infer_fused(const Detector& d_r, const Detector& d_j,
                                    const FeatureBatch& f_r, const FeatureBatch& f_j,
                                    std::span<const Verdict> o_j);

enum class InferenceMode { response, judgment_only, fused };
InferenceMode parse_inference_mode(std::string_view s);  // "r", "dj", "fused"

// Batched inference over a whole sample set.
std::vector<Prediction> infer(InferenceMode mode, const Detector& d_r, const Detector& d_j,
                              const SampleSet& set, std::size_t batch_size = 256);

}  // namespace laab

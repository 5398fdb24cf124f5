#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "laab/autodiff.hpp"
#include "laab/random.hpp"
#include "laab/tensor.hpp"

namespace laab::nn {

// Named parameters in declaration order. Checkpoints serialize in this order.
struct ParamList {
  std::vector<std::string> names;
  std::vector<ad::Var> vars;

  ad::Var add(std::string name, Tensor init);
  std::size_t count() const;  // total scalar count
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);
};

// Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct Linear {
  ad::Var weight;  // [in, out]
  ad::Var bias;    // [out]

  static Linear create(ParamList& params, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng);
  ad::Var operator()(const ad::Var& x) const;
  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }
};

// Bernoulli keep-mask scaled by 1/(1-rate).
Tensor dropout_mask(const Shape& shape, double rate, Rng& rng);

// input -> [Linear, ReLU, Dropout]* -> Linear(2) -> softmax.
// Output rows are (S_hallu, S_real).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamList& params, const std::string& prefix, std::size_t input_dim,
      std::span<const std::size_t> hidden_dims, Rng& rng);

  // `rng` is only used when train_mode is set. `penultimate`, when given,
  // receives the input of the output layer.
  ad::Var forward(const ad::Var& x, bool train_mode, double dropout, Rng* rng,
                  ad::Var* penultimate = nullptr) const;

  std::size_t input_dim() const { return layers_.front().in_features(); }
  const Linear& output_layer() const { return layers_.back(); }

 private:
  std::vector<Linear> layers_;
};

// One post-norm Transformer encoder layer (4 heads, no positional encoding)
// over projected token features, followed by masked mean pooling.
class AttentionAggregator {
 public:
  static constexpr std::size_t kModelDim = 64;
  static constexpr std::size_t kHeads = 4;
  static constexpr std::size_t kFeedForwardDim = 128;

  AttentionAggregator() = default;
  AttentionAggregator(ParamList& params, const std::string& prefix,
                      std::size_t token_dim, Rng& rng);

  // tokens [N, token_dim]; mask[i] != 0 marks valid rows. Result [1, kModelDim].
  ad::Var forward(const Tensor& tokens, std::span<const float> mask) const;

  std::size_t token_dim() const { return input_.in_features(); }

 private:
  Linear input_, query_, key_, value_, output_, ff1_, ff2_;
  ad::Var ln1_gamma_, ln1_beta_, ln2_gamma_, ln2_beta_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay Adam; moments are kept per parameter.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<ad::Var> params, AdamWConfig config);

  // Applies one update from the parameters' current gradients. Throws
  // NumericError before touching anything if a gradient is non-finite.
  void step();
  void reset();

  const AdamWConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::uint64_t steps() const { return step_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }

 private:
  std::vector<ad::Var> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
};

}  // namespace laab::nn

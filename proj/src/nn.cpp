#include "laab/nn.hpp"

#include <cmath>

#include "laab/error.hpp"

namespace laab::nn {

ad::Var ParamList::add(std::string name, Tensor init) {
  auto v = ad::parameter(std::move(init));
  names.push_back(std::move(name));
  vars.push_back(v);
  return v;
}

std::size_t ParamList::count() const {
  std::size_t n = 0;
  for (const auto& v : vars) n += v.value().numel();
  return n;
}

std::vector<Tensor> ParamList::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

void ParamList::restore(const std::vector<Tensor>& values) {
  if (values.size() != vars.size()) {
    throw ShapeError("restore: expected " + std::to_string(vars.size()) +
                     " tensors, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (values[i].shape() != vars[i].shape()) {
      throw ShapeError("restore: parameter '" + names[i] + "' has shape " +
                       shape_str(vars[i].shape()) + ", snapshot " +
                       shape_str(values[i].shape()));
    }
    vars[i].mutable_value() = values[i];
  }
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return w;
}

Linear Linear::create(ParamList& params, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng) {
  Linear l;
  l.weight = params.add(name + ".weight", glorot_uniform(in, out, rng));
  l.bias = params.add(name + ".bias", Tensor({out}));
  return l;
}

ad::Var Linear::operator()(const ad::Var& x) const {
  return ad::add_row(ad::matmul(x, weight), bias);
}

Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  Tensor mask(shape);
  const auto keep = static_cast<float>(1.0 / (1.0 - rate));
  for (auto& v : mask.data()) v = rng.uniform() < rate ? 0.0f : keep;
  return mask;
}

Mlp::Mlp(ParamList& params, const std::string& prefix, std::size_t input_dim,
         std::span<const std::size_t> hidden_dims, Rng& rng) {
  if (hidden_dims.empty()) throw ValidationError("MLP needs at least one hidden layer");
  if (input_dim == 0) throw ValidationError("MLP input dimension must be positive");
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < hidden_dims.size(); ++i) {
    layers_.push_back(
        Linear::create(params, prefix + ".fc" + std::to_string(i), in, hidden_dims[i], rng));
    in = hidden_dims[i];
  }
  layers_.push_back(Linear::create(params, prefix + ".out", in, 2, rng));
}

ad::Var Mlp::forward(const ad::Var& x, bool train_mode, double dropout, Rng* rng,
                     ad::Var* penultimate) const {
  if (x.value().rank() != 2 || x.shape()[1] != input_dim()) {
    throw ShapeError("MLP expects [batch," + std::to_string(input_dim()) + "], got " +
                     shape_str(x.shape()));
  }
  ad::Var h = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    h = ad::relu(layers_[i](h));
    if (train_mode && dropout > 0.0) {
      h = ad::mul_const(h, dropout_mask(h.shape(), dropout, *rng));
    }
  }
  if (penultimate) *penultimate = h;
  auto probs = ad::softmax_rows(layers_.back()(h));
  probs.value().require_finite("MLP output");
  return probs;
}

AttentionAggregator::AttentionAggregator(ParamList& params, const std::string& prefix,
                                         std::size_t token_dim, Rng& rng) {
  input_ = Linear::create(params, prefix + ".in_proj", token_dim, kModelDim, rng);
  query_ = Linear::create(params, prefix + ".q", kModelDim, kModelDim, rng);
  key_ = Linear::create(params, prefix + ".k", kModelDim, kModelDim, rng);
  value_ = Linear::create(params, prefix + ".v", kModelDim, kModelDim, rng);
  output_ = Linear::create(params, prefix + ".o", kModelDim, kModelDim, rng);
  ln1_gamma_ = params.add(prefix + ".ln1.gamma", Tensor({kModelDim}, 1.0f));
  ln1_beta_ = params.add(prefix + ".ln1.beta", Tensor({kModelDim}));
  ff1_ = Linear::create(params, prefix + ".ff1", kModelDim, kFeedForwardDim, rng);
  ff2_ = Linear::create(params, prefix + ".ff2", kFeedForwardDim, kModelDim, rng);
  ln2_gamma_ = params.add(prefix + ".ln2.gamma", Tensor({kModelDim}, 1.0f));
  ln2_beta_ = params.add(prefix + ".ln2.beta", Tensor({kModelDim}));
}

ad::Var AttentionAggregator::forward(const Tensor& tokens, std::span<const float> mask) const {
  if (tokens.rank() != 2 || tokens.dim(1) != token_dim()) {
    throw ShapeError("aggregator expects [N," + std::to_string(token_dim()) + "] tokens, got " +
                     shape_str(tokens.shape()));
  }
  if (mask.size() != tokens.dim(0)) throw ShapeError("aggregator: mask length mismatch");

  // Masked rows can neither attend nor be attended to, and are excluded from
  // the pooled mean, so dropping them up front is exact.
  std::vector<float> valid;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0f) {
      auto r = tokens.row(i);
      valid.insert(valid.end(), r.begin(), r.end());
    }
  }
  const std::size_t n = valid.size() / token_dim();
  if (n == 0) throw ValidationError("aggregator: all tokens are masked");
  auto x = ad::constant(Tensor({n, token_dim()}, std::move(valid)));

  auto h0 = input_(x);
  auto q = query_(h0);
  auto k = key_(h0);
  auto v = value_(h0);
  constexpr std::size_t head_dim = kModelDim / kHeads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<ad::Var> heads;
  for (std::size_t hd = 0; hd < kHeads; ++hd) {
    const std::size_t off = hd * head_dim;
    auto qh = ad::slice_cols(q, off, head_dim);
    auto kh = ad::slice_cols(k, off, head_dim);
    auto vh = ad::slice_cols(v, off, head_dim);
    auto att = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(ad::matmul(att, vh));
  }
  auto attn = output_(ad::concat_cols(heads));
  auto h1 = ad::layer_norm_rows(ad::add(h0, attn), ln1_gamma_, ln1_beta_);
  auto ff = ff2_(ad::relu(ff1_(h1)));
  auto h2 = ad::layer_norm_rows(ad::add(h1, ff), ln2_gamma_, ln2_beta_);
  std::vector<float> all(n, 1.0f);
  return ad::masked_mean_rows(h2, all);
}

AdamW::AdamW(std::vector<ad::Var> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  reset();
}

void AdamW::reset() {
  m_.clear();
  v_.clear();
  for (const auto& p : params_) {
    m_.emplace_back(p.value().numel(), 0.0);
    v_.emplace_back(p.value().numel(), 0.0);
  }
  step_ = 0;
}

void AdamW::step() {
  for (const auto& p : params_) p.grad().require_finite("gradient");
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].mutable_value().data();
    auto g = params_[k].grad().data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      double wi = w[i];
      wi -= config_.lr * config_.weight_decay * wi;
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      wi -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      w[i] = static_cast<float>(wi);
    }
  }
}

}  // namespace laab::nn

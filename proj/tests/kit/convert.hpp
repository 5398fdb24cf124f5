#pragma once

// Copies engine tensors into the double-precision reference types.

#include <cstddef>
#include <vector>

#include "kit/reference.hpp"
#include "laab/nn.hpp"

namespace kit {

inline Mat to_mat(const laab::Tensor& t) {
  Mat m(t.dim(0), t.numel() / t.dim(0));
  for (std::size_t i = 0; i < t.numel(); ++i) m.v[i] = t[i];
  return m;
}

inline std::vector<double> to_vec(const laab::Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

inline Layer to_layer(const laab::ad::Var& w, const laab::ad::Var& b) {
  return {to_mat(w.value()), to_vec(b.value())};
}

// Aggregator parameters starting at `first` in declaration order.
inline AggregatorParams aggregator_params(const laab::nn::ParamList& p, std::size_t first = 0) {
  const auto* v = p.vars.data() + first;
  AggregatorParams a;
  a.in = to_layer(v[0], v[1]);
  a.q = to_layer(v[2], v[3]);
  a.k = to_layer(v[4], v[5]);
  a.v = to_layer(v[6], v[7]);
  a.o = to_layer(v[8], v[9]);
  a.ln1_g = to_vec(v[10].value());
  a.ln1_b = to_vec(v[11].value());
  a.ff1 = to_layer(v[12], v[13]);
  a.ff2 = to_layer(v[14], v[15]);
  a.ln2_g = to_vec(v[16].value());
  a.ln2_b = to_vec(v[17].value());
  return a;
}

inline constexpr std::size_t kAggregatorParamCount = 18;

}  // namespace kit

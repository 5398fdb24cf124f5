#include "rawgen.hpp"

#include <algorithm>

namespace kit {

using laab::Rng;
using laab::Tensor;
using laab::Verdict;

laab::features::RawSample random_raw_sample(const RawPackSpec& spec, int l_r, Verdict o_j,
                                            Rng& rng) {
  laab::features::RawSample s;
  const std::size_t L = spec.layer_count, heads = L * spec.head_count;
  const std::size_t n = 1 + rng.below(spec.max_tokens);
  const int l_j = laab::derive_lj(l_r, o_j);
  const double sr = l_r == 1 ? spec.signal : -spec.signal;
  const double sj = l_j == 1 ? spec.signal : -spec.signal;

  s.hidden_r = Tensor({8, spec.hidden_dim});
  s.hidden_j = Tensor({8, spec.hidden_dim});
  for (std::size_t k = 0; k < 8; ++k) {
    // Deeper candidates carry more of the label.
    const double depth = static_cast<double>(k + 1) / 8.0;
    for (std::size_t d = 0; d < spec.hidden_dim; ++d) {
      s.hidden_r.at(k, d) = static_cast<float>(rng.normal() + (d == 0 ? sr * depth : 0.0));
      s.hidden_j.at(k, d) = static_cast<float>(rng.normal() + (d == 0 ? sj * depth : 0.0));
    }
  }
  s.logits_r = Tensor({n, L});
  for (auto& v : s.logits_r.data())
    v = static_cast<float>(std::clamp(rng.uniform(0.0, 0.6) + (l_r ? 0.3 : 0.0) * spec.signal, 0.0, 1.0));
  s.yes_j = Tensor({L});
  s.no_j = Tensor({L});
  for (std::size_t i = 0; i < L; ++i) {
    const double total = rng.uniform(0.5, 1.0);
    const double share = std::clamp(rng.uniform(0.2, 0.8) + 0.1 * (o_j == Verdict::yes ? 1 : -1), 0.0, 1.0);
    s.yes_j[i] = static_cast<float>(total * share);
    s.no_j[i] = static_cast<float>(total * (1.0 - share));
  }
  s.seg_attn_r = Tensor({heads, n, 4});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t g = 0; g < 4; ++g) {
        double v = rng.uniform(0.01, 1.0);
        if (h % 3 == 0 && g == 0) v += 0.8 * spec.signal * l_r;
        s.seg_attn_r[(h * n + a) * 4 + g] = static_cast<float>(v);
      }
  s.seg_attn_j = Tensor({heads, 1, 6});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t g = 0; g < 6; ++g) {
      double v = rng.uniform(0.01, 1.0);
      if (h % 2 == 0 && g == 2) v += 0.8 * spec.signal * l_j;
      s.seg_attn_j[h * 6 + g] = static_cast<float>(v);
    }
  s.o_j = o_j;
  s.l_r = l_r;
  s.n_tokens_r = n;
  return s;
}

laab::FeaturePack random_raw_pack(const RawPackSpec& spec) {
  Rng rng(spec.seed);
  laab::FeaturePack pack;
  auto& m = pack.manifest;
  m.llm_name = "random-raw";
  m.layer_count = spec.layer_count;
  m.head_count = spec.head_count;
  m.hidden_dim = spec.hidden_dim;
  m.schema = laab::Schema::raw;
  m.sample_count = spec.samples;
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const int l_r = rng.bernoulli(0.5) ? 1 : 0;
    const Verdict o = rng.bernoulli(0.5) ? Verdict::yes : Verdict::no;
    auto s = random_raw_sample(spec, l_r, o, rng);
    s.id = "r" + std::to_string(i);
    pack.records.push_back(laab::features::record_from_raw_sample(s));
  }
  return pack;
}

}  // namespace kit

#pragma once

// Random raw-schema packs with a weak label signal in every feature family.

#include <cstddef>
#include <cstdint>

#include "laab/features.hpp"
#include "laab/pack.hpp"
#include "laab/random.hpp"

namespace kit {

struct RawPackSpec {
  std::size_t samples = 40;
  std::size_t layer_count = 8;
  std::size_t head_count = 2;
  std::size_t hidden_dim = 6;
  std::size_t max_tokens = 5;
  double signal = 1.0;  // 0: labels are independent of the features
  std::uint64_t seed = 0;
};

laab::features::RawSample random_raw_sample(const RawPackSpec& spec, int l_r, laab::Verdict o_j,
                                            laab::Rng& rng);
laab::FeaturePack random_raw_pack(const RawPackSpec& spec);

}  // namespace kit

#pragma once

// Synthetic dual-view data with a known generative model. A latent truth z
// picks the response label; a judge with accuracy q emits the verdict; each
// view is an isotropic Gaussian around a class mean.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "laab/pack.hpp"

namespace laab {

struct SynthConfig {
  std::size_t d_r = 0;
  std::size_t d_j = 0;
  std::array<std::vector<double>, 2> mu_r;  // indexed by z = l_r
  // Indexed by 2*l_j + (o_j == no): (0,yes) (0,no) (1,yes) (1,no).
  std::array<std::vector<double>, 4> mu_j;
  double sigma_r = 1.0;
  double sigma_j = 1.0;
  double q = 0.85;
  std::size_t n_samples = 1000;
  std::size_t max_tokens = 40;
  std::array<double, 3> split{kDefaultSplit};
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  // Accepts the explicit form above or {"planted": {...}} (see PlantedFamily).
  static SynthConfig from_json(const nlohmann::json& j);
};

inline std::size_t judgment_mean_index(int l_j, Verdict o_j) {
  return 2 * static_cast<std::size_t>(l_j) + (o_j == Verdict::no ? 1 : 0);
}

// Means planted on the leading coordinates; the remaining coordinates are
// pure noise. The response label sits on f_r[0] with separation snr_r; the
// judgment label on f_j[0] with separation snr_j and the verdict on f_j[1]
// with separation snr_o. Unit variances.
struct PlantedFamily {
  std::size_t d_r = 32;
  std::size_t d_j = 32;
  double snr_r = 1.0;
  double snr_j = 2.0;
  double snr_o = 4.0;
  double q = 0.85;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;

  SynthConfig build() const;
};

// Derived-schema pack (feature kind "hidden") with a 7:1:2 split stored in
// the records.
FeaturePack synth_generate(const SynthConfig& cfg);

// P(l_r = 1 | f_r) under the generating model, equal priors.
double bayes_oracle(const SynthConfig& cfg, std::span<const float> f_r);

}  // namespace laab

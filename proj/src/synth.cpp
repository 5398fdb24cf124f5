#include "laab/synth.hpp"

#include <algorithm>
#include <cmath>

#include "laab/error.hpp"
#include "laab/random.hpp"

namespace laab {
using nlohmann::json;

void SynthConfig::validate() const {
  if (d_r == 0 || d_j == 0) throw ValidationError("synth: dimensions must be positive");
  for (const auto& m : mu_r) {
    if (m.size() != d_r) throw ValidationError("synth: every mu_r needs d_r entries");
  }
  for (const auto& m : mu_j) {
    if (m.size() != d_j) throw ValidationError("synth: every mu_j needs d_j entries");
  }
  if (!(sigma_r > 0.0) || !(sigma_j > 0.0) || !std::isfinite(sigma_r) || !std::isfinite(sigma_j)) {
    throw ValidationError("synth: standard deviations must be positive and finite");
  }
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("synth: q must lie in [0,1]");
  if (max_tokens < 1) throw ValidationError("synth: max_tokens must be at least 1");
  const double s = split[0] + split[1] + split[2];
  if (std::abs(s - 1.0) > 1e-9) throw ValidationError("synth: split ratios must sum to 1");
}

json SynthConfig::to_json() const {
  return {{"d_r", d_r},         {"d_j", d_j},         {"mu_r", mu_r},
          {"mu_j", mu_j},       {"sigma_r", sigma_r}, {"sigma_j", sigma_j},
          {"q", q},             {"n_samples", n_samples}, {"max_tokens", max_tokens},
          {"split", split},     {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  try {
    if (j.contains("planted")) {
      const auto& p = j.at("planted");
      PlantedFamily f;
      f.d_r = p.value("d_r", f.d_r);
      f.d_j = p.value("d_j", f.d_j);
      f.snr_r = p.value("snr_r", f.snr_r);
      f.snr_j = p.value("snr_j", f.snr_j);
      f.snr_o = p.value("snr_o", f.snr_o);
      f.q = j.value("q", p.value("q", f.q));
      f.n_samples = j.value("n_samples", p.value("n_samples", f.n_samples));
      f.seed = j.value("seed", p.value("seed", f.seed));
      c = f.build();
    } else {
      c.d_r = j.at("d_r").get<std::size_t>();
      c.d_j = j.at("d_j").get<std::size_t>();
      c.mu_r = j.at("mu_r").get<std::array<std::vector<double>, 2>>();
      c.mu_j = j.at("mu_j").get<std::array<std::vector<double>, 4>>();
      c.sigma_r = j.value("sigma_r", c.sigma_r);
      c.sigma_j = j.value("sigma_j", c.sigma_j);
      c.q = j.value("q", c.q);
      c.n_samples = j.value("n_samples", c.n_samples);
      c.seed = j.value("seed", c.seed);
    }
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    if (j.contains("split")) c.split = j.at("split").get<std::array<double, 3>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

SynthConfig PlantedFamily::build() const {
  if (d_r < 1 || d_j < 2) throw ValidationError("planted family needs d_r >= 1 and d_j >= 2");
  SynthConfig c;
  c.d_r = d_r;
  c.d_j = d_j;
  for (int z = 0; z < 2; ++z) {
    c.mu_r[z].assign(d_r, 0.0);
    c.mu_r[z][0] = (z ? 0.5 : -0.5) * snr_r;
  }
  for (int lj = 0; lj < 2; ++lj) {
    for (Verdict o : {Verdict::yes, Verdict::no}) {
      auto& m = c.mu_j[judgment_mean_index(lj, o)];
      m.assign(d_j, 0.0);
      m[0] = (lj ? 0.5 : -0.5) * snr_j;
      m[1] = (o == Verdict::yes ? 0.5 : -0.5) * snr_o;
    }
  }
  c.q = q;
  c.n_samples = n_samples;
  c.seed = seed;
  c.validate();
  return c;
}

FeaturePack synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  FeaturePack pack;
  auto& m = pack.manifest;
  m.llm_name = "synthetic";
  m.schema = Schema::derived;
  m.feature_kind = FeatureKind::hidden;
  m.hidden_dim = cfg.d_r;
  m.f_r_width = cfg.d_r;
  m.f_j_width = cfg.d_j;
  m.extra = {{"synth", cfg.to_json()}};

  Rng rng(cfg.seed);
  pack.records.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    PackRecord r;
    r.id = "s" + std::to_string(i);
    const int z = rng.bernoulli(0.5) ? 1 : 0;
    const bool correct = rng.bernoulli(cfg.q);
    // A correct judge says "yes" exactly when the response is factual.
    r.o_j = (correct == (z == 1)) ? Verdict::yes : Verdict::no;
    r.l_r = z;
    r.l_j = derive_lj(z, r.o_j);
    r.n_tokens_r = 1 + static_cast<std::size_t>(rng.below(cfg.max_tokens));
    Tensor fr({cfg.d_r});
    const auto& mr = cfg.mu_r[static_cast<std::size_t>(z)];
    for (std::size_t d = 0; d < cfg.d_r; ++d) {
      fr[d] = static_cast<float>(mr[d] + cfg.sigma_r * rng.normal());
    }
    Tensor fj({cfg.d_j});
    const auto& mj = cfg.mu_j[judgment_mean_index(r.l_j, r.o_j)];
    for (std::size_t d = 0; d < cfg.d_j; ++d) {
      fj[d] = static_cast<float>(mj[d] + cfg.sigma_j * rng.normal());
    }
    r.tensors.emplace_back("f_r", std::move(fr));
    r.tensors.emplace_back("f_j", std::move(fj));
    pack.records.push_back(std::move(r));
  }
  if (cfg.n_samples > 0) {
    const Partition p = split(cfg.n_samples, cfg.split, cfg.seed);
    for (auto i : p.train) pack.records[i].split = Split::train;
    for (auto i : p.val) pack.records[i].split = Split::val;
    for (auto i : p.test) pack.records[i].split = Split::test;
  }
  pack.manifest.sample_count = pack.records.size();
  return pack;
}

double bayes_oracle(const SynthConfig& cfg, std::span<const float> f_r) {
  if (f_r.size() != cfg.d_r) throw ShapeError("bayes_oracle: feature width mismatch");
  // log p(x|1) - log p(x|0) for a shared isotropic covariance.
  double llr = 0.0;
  for (std::size_t d = 0; d < cfg.d_r; ++d) {
    const double a = f_r[d] - cfg.mu_r[0][d];
    const double b = f_r[d] - cfg.mu_r[1][d];
    llr += a * a - b * b;
  }
  llr /= 2.0 * cfg.sigma_r * cfg.sigma_r;
  return 1.0 / (1.0 + std::exp(-llr));
}

}  // namespace laab

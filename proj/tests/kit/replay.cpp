#include "replay.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace kit {

using laab::Role;
using laab::Tensor;
using Rows = std::vector<std::array<double, 2>>;

namespace {

// softmax(h W + b) per row.
Rows head_probs(const Tensor& h, const laab::Detector& d) {
  const auto last = d.last_layer();
  const Tensor& w = last[0].value();
  const Tensor& b = last[1].value();
  const std::size_t rows = h.dim(0), k = h.dim(1);
  Rows p(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double z[2] = {b[0], b[1]};
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 0; t < k; ++t) z[c] += static_cast<double>(h.at(i, t)) * w.at(t, c);
    const double m = std::max(z[0], z[1]);
    const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    p[i] = {e0 / (e0 + e1), e1 / (e0 + e1)};
  }
  return p;
}

// ‖∂L/∂W, ∂L/∂b‖ for a loss whose gradient with respect to the logits is g.
double last_layer_norm(const Tensor& h, const Rows& g) {
  const std::size_t rows = h.dim(0), k = h.dim(1);
  double sq = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    double gb = 0.0;
    for (std::size_t i = 0; i < rows; ++i) gb += g[i][c];
    sq += gb * gb;
    for (std::size_t t = 0; t < k; ++t) {
      double gw = 0.0;
      for (std::size_t i = 0; i < rows; ++i) gw += static_cast<double>(h.at(i, t)) * g[i][c];
      sq += gw * gw;
    }
  }
  return std::sqrt(sq);
}

Rows ce_logit_grad(const Rows& p, const std::vector<int>& labels) {
  const double n = static_cast<double>(p.size());
  Rows g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t c = 0; c < 2; ++c)
      g[i][c] = (p[i][c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) / n;
  return g;
}

double huber_slope(double r, double delta) {
  return std::abs(r) <= delta ? r : (r > 0 ? delta : -delta);
}

// Gradient with respect to the logits of a batch-mean loss whose derivative
// with respect to probability column `col[i]` is dp[i].
Rows through_softmax(const Rows& p, const std::vector<double>& dp, const std::vector<std::size_t>& col) {
  Rows g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::size_t c = col[i];
    const double s = dp[i] * p[i][c] * (1.0 - p[i][c]);
    g[i][c] = s;
    g[i][1 - c] = -s;
  }
  return g;
}

// The recorded forward output must be what the current head computes from the
// recorded penultimate activations.
bool consistent(const Rows& recorded, const Tensor& h, const laab::Detector& d) {
  const Rows p = head_probs(h, d);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t c = 0; c < 2; ++c)
      if (std::abs(p[i][c] - recorded[i][c]) > 1e-4) return false;
  return true;
}

double ratio(double ce, double logic, const laab::LogicLossConfig& cfg) {
  return std::clamp(ce / (logic + cfg.eps), 0.0, cfg.alpha_clamp);
}

}  // namespace

double replay_alpha(const laab::BatchObservation& obs, const laab::SampleSet& train,
                    const laab::Detector& d_r, const laab::Detector& d_j,
                    const laab::LogicLossConfig& cfg) {
  const std::size_t n = obs.indices.size();
  std::vector<int> l_r(n), l_j(n);
  std::vector<std::size_t> col(n), col0(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = obs.indices[k];
    l_r[k] = train.l_r[i];
    l_j[k] = train.l_j[i];
    col[k] = train.o_j[i] == laab::Verdict::yes ? 0 : 1;
  }
  auto as_rows = [](const Tensor& t) {
    Rows r(t.dim(0));
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = {t.at(i, 0), t.at(i, 1)};
    return r;
  };
  const double inv_n = 1.0 / static_cast<double>(n);

  // Residual r_i = S_r,hallu - aligned S_j entry.
  auto residuals = [&](const Rows& pr, const Rows& pj) {
    std::vector<double> r(n);
    for (std::size_t k = 0; k < n; ++k) r[k] = pr[k][0] - pj[k][col[k]];
    return r;
  };

  if (obs.stage == 1) {
    if (obs.role == Role::response) {
      const Rows p = as_rows(*obs.probs_r);
      if (!consistent(p, *obs.penultimate_r, d_r)) return std::nan("");
      const Rows peer = as_rows(*obs.probs_j);
      const auto r = residuals(p, peer);
      std::vector<double> dp(n);
      for (std::size_t k = 0; k < n; ++k) dp[k] = huber_slope(r[k], cfg.delta) * inv_n;
      return ratio(last_layer_norm(*obs.penultimate_r, ce_logit_grad(p, l_r)),
                   last_layer_norm(*obs.penultimate_r, through_softmax(p, dp, col0)), cfg);
    }
    const Rows p = as_rows(*obs.probs_j);
    if (!consistent(p, *obs.penultimate_j, d_j)) return std::nan("");
    const Rows peer = as_rows(*obs.probs_r);
    const auto r = residuals(peer, p);
    std::vector<double> dp(n);
    for (std::size_t k = 0; k < n; ++k) dp[k] = -huber_slope(r[k], cfg.delta) * inv_n;
    return ratio(last_layer_norm(*obs.penultimate_j, ce_logit_grad(p, l_j)),
                 last_layer_norm(*obs.penultimate_j, through_softmax(p, dp, col)), cfg);
  }

  const Rows pr = as_rows(*obs.probs_r);
  const Rows pj = as_rows(*obs.probs_j);
  if (!consistent(pr, *obs.penultimate_r, d_r) || !consistent(pj, *obs.penultimate_j, d_j))
    return std::nan("");
  const auto r = residuals(pr, pj);
  std::vector<double> dr(n), dj(n);
  for (std::size_t k = 0; k < n; ++k) {
    dr[k] = huber_slope(r[k], cfg.delta) * inv_n;
    dj[k] = -dr[k];
  }
  const double a_r = ratio(last_layer_norm(*obs.penultimate_r, ce_logit_grad(pr, l_r)),
                           last_layer_norm(*obs.penultimate_r, through_softmax(pr, dr, col0)), cfg);
  const double a_j = ratio(last_layer_norm(*obs.penultimate_j, ce_logit_grad(pj, l_j)),
                           last_layer_norm(*obs.penultimate_j, through_softmax(pj, dj, col)), cfg);
  return 0.5 * (a_r + a_j);
}

}  // namespace kit

#include "laab/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace laab::features {

std::vector<std::size_t> quantile_layers(std::size_t layer_count) {
  if (layer_count < kCandidateLayers) {
    throw ValidationError("unsupported model: " + std::to_string(layer_count) +
                          " layers, need at least 8");
  }
  std::vector<std::size_t> layers;
  for (std::size_t k = 1; k <= kCandidateLayers; ++k) {
    // ceil(k/8 * L) in exact integer arithmetic
    const std::size_t idx = (k * layer_count + kCandidateLayers - 1) / kCandidateLayers;
    if (layers.empty() || layers.back() != idx) layers.push_back(idx);
  }
  return layers;
}

std::size_t select_kval(std::span<const double> candidate_scores) {
  if (candidate_scores.empty()) throw ValidationError("select_kval: no candidate scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidate_scores.size(); ++i) {
    if (candidate_scores[i] >= candidate_scores[best]) best = i;
  }
  return best;
}

Tensor build_p_j(const Tensor& p_yes, const Tensor& p_no, Verdict o_j) {
  if (p_yes.numel() != p_no.numel()) {
    throw ShapeError("build_p_j: p_yes has " + std::to_string(p_yes.numel()) +
                     " layers, p_no " + std::to_string(p_no.numel()));
  }
  const Tensor& chosen = o_j == Verdict::yes ? p_yes : p_no;
  const Tensor& other = o_j == Verdict::yes ? p_no : p_yes;
  const std::size_t n = chosen.numel();
  Tensor out({2 * n});
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = chosen[i];
    out[n + i] = chosen[i] - other[i];
  }
  return out;
}

Tensor lookback_ratio(const Tensor& seg_attn) {
  if (seg_attn.rank() != 3) {
    throw ShapeError("lookback_ratio expects [heads, anchors, segments], got " +
                     shape_str(seg_attn.shape()));
  }
  const std::size_t rows = seg_attn.dim(0) * seg_attn.dim(1);
  const std::size_t segs = seg_attn.dim(2);
  Tensor out = seg_attn;
  auto d = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = d.subspan(r * segs, segs);
    double sum = 0.0;
    for (float v : row) {
      if (v < 0.0f || !std::isfinite(v)) {
        throw ValidationError("lookback_ratio: attention entries must be finite and >= 0");
      }
      sum += v;
    }
    if (sum <= 0.0) {
      throw DegenerateAttentionError("lookback_ratio: all-zero attention row (head " +
                                     std::to_string(r / seg_attn.dim(1)) + ", anchor " +
                                     std::to_string(r % seg_attn.dim(1)) + ")");
    }
    for (auto& v : row) v = static_cast<float>(v / sum);
  }
  return out;
}

Tensor pool_lookback(const Tensor& token_ratios) {
  if (token_ratios.rank() != 3) {
    throw ShapeError("pool_lookback expects [heads, anchors, segments], got " +
                     shape_str(token_ratios.shape()));
  }
  const std::size_t heads = token_ratios.dim(0);
  const std::size_t anchors = token_ratios.dim(1);
  const std::size_t segs = token_ratios.dim(2);
  if (anchors == 0) throw ValidationError("pool_lookback: no anchor tokens");
  Tensor out({heads, segs});
  std::vector<double> acc(segs);
  for (std::size_t h = 0; h < heads; ++h) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t a = 0; a < anchors; ++a) {
      const float* row = token_ratios.data().data() + (h * anchors + a) * segs;
      for (std::size_t s = 0; s < segs; ++s) acc[s] += row[s];
    }
    for (std::size_t s = 0; s < segs; ++s) {
      out.at(h, s) = static_cast<float>(acc[s] / static_cast<double>(anchors));
    }
  }
  return out;
}

namespace {

constexpr double kKlSmoothing = 1e-8;

std::vector<double> smoothed(std::span<const double> p) {
  std::vector<double> out(p.begin(), p.end());
  double sum = 0.0;
  for (auto& v : out) sum += (v += kKlSmoothing);
  for (auto& v : out) v /= sum;
  return out;
}

double kl(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

double symmetric_kl(std::span<const double> p, std::span<const double> q) {
  const auto ps = smoothed(p);
  const auto qs = smoothed(q);
  return 0.5 * (kl(ps, qs) + kl(qs, ps));
}

void check_pooled_set(std::span<const Tensor> set, const Shape& shape, const char* which) {
  if (set.empty()) {
    throw ValidationError(std::string("kl_head_scores: no ") + which + " samples");
  }
  for (const auto& t : set) {
    if (t.shape() != shape) throw ShapeError("kl_head_scores: inconsistent pooled shapes");
  }
}

// [heads, seg] mean over the set, in double.
std::vector<double> mean_distribution(std::span<const Tensor> set) {
  std::vector<double> acc(set.front().numel(), 0.0);
  for (const auto& t : set) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t[i];
  }
  for (auto& v : acc) v /= static_cast<double>(set.size());
  return acc;
}

}  // namespace

Tensor kl_head_scores(std::span<const Tensor> positive, std::span<const Tensor> negative,
                      KlEstimator estimator) {
  if (positive.empty() || negative.empty()) {
    throw ValidationError("kl_head_scores: both classes need at least one sample");
  }
  const Shape shape = positive.front().shape();
  if (shape.size() != 2) throw ShapeError("kl_head_scores expects [heads, segments] inputs");
  check_pooled_set(positive, shape, "positive");
  check_pooled_set(negative, shape, "negative");
  const std::size_t heads = shape[0], segs = shape[1];

  const auto pbar = mean_distribution(positive);
  const auto qbar = mean_distribution(negative);
  Tensor scores({heads});
  for (std::size_t h = 0; h < heads; ++h) {
    std::span<const double> p(pbar.data() + h * segs, segs);
    std::span<const double> q(qbar.data() + h * segs, segs);
    double score = 0.0;
    if (estimator == KlEstimator::mean_distribution) {
      score = symmetric_kl(p, q);
    } else {
      // Each sample against the opposite class mean, averaged per class.
      auto against = [&](std::span<const Tensor> set, std::span<const double> ref) {
        double acc = 0.0;
        std::vector<double> row(segs);
        for (const auto& t : set) {
          for (std::size_t s = 0; s < segs; ++s) row[s] = t[h * segs + s];
          acc += symmetric_kl(row, ref);
        }
        return acc / static_cast<double>(set.size());
      };
      score = 0.5 * (against(positive, q) + against(negative, p));
    }
    scores[h] = static_cast<float>(std::max(score, 0.0));
  }
  return scores;
}

HeadSelection select_top_p_heads(const Tensor& scores, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("top-P threshold must be in (0, 1]");
  double total = 0.0;
  for (float s : scores.data()) {
    if (s < 0.0f || !std::isfinite(s)) {
      throw ValidationError("head scores must be finite and non-negative");
    }
    total += s;
  }
  if (total <= 0.0) throw ValidationError("top-P selection: every head score is zero");

  std::vector<std::size_t> order(scores.numel());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  HeadSelection sel;
  sel.kl_scores = scores;
  sel.p_threshold = p;
  double cum = 0.0;
  for (std::size_t idx : order) {
    if (scores[idx] <= 0.0f) break;
    sel.selected.push_back(idx);
    cum += scores[idx];
    if (cum / total >= p - 1e-12) break;
  }
  return sel;
}

HeadSelection fit_head_selection(std::span<const Tensor> pooled, std::span<const int> labels,
                                 double p, KlEstimator estimator) {
  if (pooled.size() != labels.size()) throw ShapeError("fit_head_selection: size mismatch");
  std::vector<Tensor> pos, neg;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    (labels[i] == 1 ? pos : neg).push_back(pooled[i]);
  }
  return select_top_p_heads(kl_head_scores(pos, neg, estimator), p);
}

namespace {

Tensor candidate_row(const Tensor& candidates, std::size_t k, const char* what) {
  if (candidates.rank() != 2 || candidates.dim(0) != kCandidateLayers) {
    throw ShapeError(std::string(what) + " must be [8, hidden_dim], got " +
                     shape_str(candidates.shape()));
  }
  if (k >= kCandidateLayers) {
    throw ValidationError("K_val candidate position " + std::to_string(k) + " out of range");
  }
  auto r = candidates.row(k);
  return Tensor({r.size()}, std::vector<float>(r.begin(), r.end()));
}

Tensor gather_heads(const Tensor& pooled, const std::vector<std::size_t>& heads) {
  const std::size_t segs = pooled.dim(1);
  std::vector<float> out;
  out.reserve(heads.size() * segs);
  for (std::size_t h : heads) {
    if (h >= pooled.dim(0)) throw ShapeError("selected head index out of range");
    auto r = pooled.row(h);
    out.insert(out.end(), r.begin(), r.end());
  }
  const std::size_t n = out.size();
  return Tensor({n}, std::move(out));
}

}  // namespace

DerivedFeatures derive(const RawSample& raw, const DeriveSettings& settings) {
  DerivedFeatures f;
  f.h_r = candidate_row(raw.hidden_r, settings.kval_r, "hidden_r");
  f.h_j = candidate_row(raw.hidden_j, settings.kval_j, "hidden_j");
  f.p_r = raw.logits_r;
  f.p_j = build_p_j(raw.yes_j, raw.no_j, raw.o_j);

  const Tensor pooled_r = pool_lookback(lookback_ratio(raw.seg_attn_r));
  if (settings.heads_r) {
    f.a_r = gather_heads(pooled_r, settings.heads_r->selected);
  } else {
    f.a_r = pooled_r.reshaped({pooled_r.numel()});
  }
  const Tensor pooled_j = pool_lookback(lookback_ratio(raw.seg_attn_j));
  if (settings.heads_j) {
    f.a_j = gather_heads(pooled_j, settings.heads_j->selected);
  } else {
    f.a_j = pooled_j.reshaped({pooled_j.numel()});
  }
  return f;
}

RawSample raw_sample_from_record(const PackRecord& record) {
  RawSample s;
  s.id = record.id;
  s.hidden_r = record.tensor("hidden_r");
  s.hidden_j = record.tensor("hidden_j");
  s.logits_r = record.tensor("logits_r");
  s.yes_j = record.tensor("yes_j");
  s.no_j = record.tensor("no_j");
  s.seg_attn_r = record.tensor("seg_attn_r");
  s.seg_attn_j = record.tensor("seg_attn_j");
  s.o_j = record.o_j;
  s.l_r = record.l_r;
  s.n_tokens_r = record.n_tokens_r;
  return s;
}

PackRecord record_from_raw_sample(const RawSample& raw) {
  PackRecord r;
  r.id = raw.id;
  r.l_r = raw.l_r;
  r.o_j = raw.o_j;
  r.l_j = derive_lj(raw.l_r, raw.o_j);
  r.n_tokens_r = raw.n_tokens_r;
  r.tensors = {{"hidden_r", raw.hidden_r},     {"hidden_j", raw.hidden_j},
               {"logits_r", raw.logits_r},     {"yes_j", raw.yes_j},
               {"no_j", raw.no_j},             {"seg_attn_r", raw.seg_attn_r},
               {"seg_attn_j", raw.seg_attn_j}};
  return r;
}

namespace {

nlohmann::json selection_json(const HeadSelection& s) {
  return {{"p", s.p_threshold},
          {"selected", s.selected},
          {"kl_scores", std::vector<float>(s.kl_scores.data().begin(), s.kl_scores.data().end())}};
}

}  // namespace

DeriveOutcome derive_pack(const FeaturePack& raw, const DeriveOptions& options) {
  if (raw.manifest.schema != Schema::raw) {
    throw ValidationError("derive needs a raw-schema pack");
  }
  const Partition part = partition_pack(raw, options.split_seed);
  std::vector<Split> split_of(raw.records.size(), Split::train);
  for (auto i : part.val) split_of[i] = Split::val;
  for (auto i : part.test) split_of[i] = Split::test;

  DeriveOutcome outcome;
  std::vector<bool> excluded(raw.records.size(), false);

  // Pooled ratios are needed for every sample; degenerate rows drop the sample.
  std::vector<Tensor> pooled_r(raw.records.size()), pooled_j(raw.records.size());
  for (std::size_t i = 0; i < raw.records.size(); ++i) {
    const auto& rec = raw.records[i];
    try {
      pooled_r[i] = pool_lookback(lookback_ratio(rec.tensor("seg_attn_r")));
      pooled_j[i] = pool_lookback(lookback_ratio(rec.tensor("seg_attn_j")));
    } catch (const DegenerateAttentionError&) {
      excluded[i] = true;
      outcome.excluded.push_back(rec.id);
    }
  }

  if (options.kind == FeatureKind::attn) {
    std::vector<Tensor> fit_r, fit_j;
    std::vector<int> labels_r, labels_j;
    for (auto i : part.train) {
      if (excluded[i]) continue;
      fit_r.push_back(pooled_r[i]);
      labels_r.push_back(raw.records[i].l_r);
      fit_j.push_back(pooled_j[i]);
      labels_j.push_back(raw.records[i].l_j);
    }
    outcome.heads_r = fit_head_selection(fit_r, labels_r, options.top_p, options.estimator);
    if (options.top_p_judgment) {
      outcome.heads_j = fit_head_selection(fit_j, labels_j, options.top_p, options.estimator);
    }
  }

  FeaturePack& out = outcome.pack;
  out.manifest = raw.manifest;
  out.manifest.schema = Schema::derived;
  out.manifest.feature_kind = options.kind;
  out.manifest.extra["kval_r"] = options.kval_r;
  out.manifest.extra["kval_j"] = options.kval_j;
  out.manifest.extra["excluded"] = outcome.excluded;
  if (outcome.heads_r) out.manifest.extra["heads_r"] = selection_json(*outcome.heads_r);
  if (outcome.heads_j) out.manifest.extra["heads_j"] = selection_json(*outcome.heads_j);

  DeriveSettings settings;
  settings.kval_r = options.kval_r;
  settings.kval_j = options.kval_j;
  settings.heads_r = outcome.heads_r ? &*outcome.heads_r : nullptr;
  settings.heads_j = outcome.heads_j ? &*outcome.heads_j : nullptr;

  for (std::size_t i = 0; i < raw.records.size(); ++i) {
    if (excluded[i]) continue;
    const auto& rec = raw.records[i];
    const DerivedFeatures f = derive(raw_sample_from_record(rec), settings);
    PackRecord d;
    d.id = rec.id;
    d.l_r = rec.l_r;
    d.o_j = rec.o_j;
    d.l_j = rec.l_j;
    d.n_tokens_r = rec.n_tokens_r;
    d.split = split_of[i];
    switch (options.kind) {
      case FeatureKind::hidden: d.tensors = {{"f_r", f.h_r}, {"f_j", f.h_j}}; break;
      case FeatureKind::logits: d.tensors = {{"f_r", f.p_r}, {"f_j", f.p_j}}; break;
      case FeatureKind::attn: d.tensors = {{"f_r", f.a_r}, {"f_j", f.a_j}}; break;
    }
    out.records.push_back(std::move(d));
  }
  const std::size_t heads = raw.manifest.layer_count * raw.manifest.head_count;
  switch (options.kind) {
    case FeatureKind::hidden:
      out.manifest.f_r_width = raw.manifest.hidden_dim;
      out.manifest.f_j_width = raw.manifest.hidden_dim;
      break;
    case FeatureKind::logits:
      out.manifest.f_r_width = raw.manifest.layer_count;
      out.manifest.f_j_width = 2 * raw.manifest.layer_count;
      break;
    case FeatureKind::attn:
      out.manifest.f_r_width = outcome.heads_r->selected.size() * kResponseSegments;
      out.manifest.f_j_width =
          (outcome.heads_j ? outcome.heads_j->selected.size() : heads) * kJudgmentSegments;
      break;
  }
  out.manifest.sample_count = out.records.size();
  return outcome;
}

}  // namespace laab::features

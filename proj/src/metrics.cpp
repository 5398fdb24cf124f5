#include "laab/metrics.hpp"

#include <cstdio>

#include "laab/error.hpp"
#include "laab/labels.hpp"

namespace laab {
using nlohmann::json;

namespace {

void check_pair(std::span<const int> preds, std::span<const int> labels) {
  if (preds.empty()) throw ValidationError("metrics: empty input");
  if (preds.size() != labels.size()) {
    throw ValidationError("metrics: " + std::to_string(preds.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require_binary_label(preds[i], "prediction");
    require_binary_label(labels[i], "label");
  }
}

}  // namespace

EvalResult evaluate(std::span<const int> preds, std::span<const int> labels) {
  check_pair(preds, labels);
  EvalResult r;
  r.count = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) ++r.confusion[labels[i]][preds[i]];
  for (int c = 0; c < 2; ++c) {
    const double tp = static_cast<double>(r.confusion[c][c]);
    const double fp = static_cast<double>(r.confusion[1 - c][c]);
    const double fn = static_cast<double>(r.confusion[c][1 - c]);
    r.precision[c] = tp + fp > 0 ? 100.0 * tp / (tp + fp) : 0.0;
    r.recall[c] = tp + fn > 0 ? 100.0 * tp / (tp + fn) : 0.0;
    // 2TP / (2TP + FP + FN); a class absent from both sides scores 0.
    r.f1[c] = tp > 0 ? 100.0 * 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
  }
  r.macro_f1 = 0.5 * (r.f1[0] + r.f1[1]);
  r.accuracy = 100.0 * static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) /
               static_cast<double>(r.count);
  return r;
}

double macro_f1(std::span<const int> preds, std::span<const int> labels) {
  return evaluate(preds, labels).macro_f1;
}

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  return evaluate(preds, labels).accuracy;
}

json EvalResult::to_json() const {
  return {{"macro_f1", macro_f1},
          {"accuracy", accuracy},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"confusion", confusion},
          {"count", count}};
}

std::vector<LengthBin> default_length_bins() {
  std::vector<LengthBin> bins(4);
  bins[0].lo = 0, bins[0].hi = 10;
  bins[1].lo = 10, bins[1].hi = 20;
  bins[2].lo = 20, bins[2].hi = 30;
  bins[3].lo = 30;
  return bins;
}

std::vector<LengthBin> length_breakdown(std::span<const int> preds, std::span<const int> labels,
                                        std::span<const std::size_t> n_tokens,
                                        std::vector<LengthBin> bins) {
  check_pair(preds, labels);
  if (n_tokens.size() != preds.size()) throw ValidationError("length_breakdown: length mismatch");
  if (bins.empty()) throw ValidationError("length_breakdown: no bins");
  for (auto& b : bins) b.count = b.correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (n_tokens[i] == 0) throw ValidationError("length_breakdown: token count must be positive");
    LengthBin* hit = nullptr;
    for (auto& b : bins) {
      if (n_tokens[i] > b.lo && n_tokens[i] <= b.hi) {
        hit = &b;
        break;
      }
    }
    if (!hit) {
      throw ValidationError("length_breakdown: no bin covers " + std::to_string(n_tokens[i]) +
                            " tokens");
    }
    ++hit->count;
    if (preds[i] == labels[i]) ++hit->correct;
  }
  for (auto& b : bins) {
    b.accuracy = b.count ? 100.0 * static_cast<double>(b.correct) / static_cast<double>(b.count)
                         : 0.0;
  }
  return bins;
}

TransitionReport transition_report(std::span<const int> base_preds,
                                   std::span<const int> laab_preds,
                                   std::span<const int> dj_preds, std::span<const int> labels) {
  const std::size_t n = labels.size();
  if (base_preds.size() != n || laab_preds.size() != n || dj_preds.size() != n) {
    throw ValidationError("transition_report: length mismatch");
  }
  TransitionReport t;
  for (std::size_t i = 0; i < n; ++i) {
    const bool base_ok = base_preds[i] == labels[i];
    const bool dj_ok = dj_preds[i] == labels[i];
    const int src = base_ok ? (dj_ok ? TransitionReport::both_correct
                                     : TransitionReport::only_base_correct)
                            : (dj_ok ? TransitionReport::only_dj_correct
                                     : TransitionReport::both_wrong);
    ++(laab_preds[i] == labels[i] ? t.to_correct : t.to_incorrect)[src];
  }
  return t;
}

json TransitionReport::to_json() const {
  json j = json::object();
  for (int s = 0; s < 4; ++s) {
    j[kSourceNames[s]] = {{"size", source_size(s)},
                          {"to_correct", to_correct[s]},
                          {"to_incorrect", to_incorrect[s]}};
  }
  return j;
}

std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace laab

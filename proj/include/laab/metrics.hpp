#pragma once

// Classification metrics in percent. Class 1 is "factual", class 0 is
// "hallucinated".

#include <array>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace laab {

struct EvalResult {
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::array<double, 2> precision{};
  std::array<double, 2> recall{};
  std::array<double, 2> f1{};
  // confusion[label][pred]
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  std::size_t count = 0;

  nlohmann::json to_json() const;
};

EvalResult evaluate(std::span<const int> preds, std::span<const int> labels);
double macro_f1(std::span<const int> preds, std::span<const int> labels);
double accuracy(std::span<const int> preds, std::span<const int> labels);

// Half-open token-count interval (lo, hi].
struct LengthBin {
  std::size_t lo = 0;
  std::size_t hi = std::numeric_limits<std::size_t>::max();
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;  // percent; 0 for an empty bin
};

std::vector<LengthBin> default_length_bins();
std::vector<LengthBin> length_breakdown(std::span<const int> preds, std::span<const int> labels,
                                        std::span<const std::size_t> n_tokens,
                                        std::vector<LengthBin> bins = default_length_bins());

// Samples grouped by whether the base response detector and the
// judgment-only path were right, then by whether LaaB is right.
struct TransitionReport {
  enum Source { both_correct, only_base_correct, only_dj_correct, both_wrong };
  static constexpr std::array<const char*, 4> kSourceNames{
      "both_correct", "only_base_correct", "only_dj_correct", "both_wrong"};
  std::array<std::size_t, 4> to_correct{};
  std::array<std::size_t, 4> to_incorrect{};

  std::size_t source_size(int s) const { return to_correct[s] + to_incorrect[s]; }
  nlohmann::json to_json() const;
};

TransitionReport transition_report(std::span<const int> base_preds,
                                   std::span<const int> laab_preds,
                                   std::span<const int> dj_preds, std::span<const int> labels);

// Two-decimal percent string, e.g. "73.33".
std::string format_percent(double v);

}  // namespace laab

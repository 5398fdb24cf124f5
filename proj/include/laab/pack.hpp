#pragma once

// Feature packs: a directory holding
//   manifest.json  - dimensions, schema and dtype tag
//   records.jsonl  - one JSON object per sample (labels + named byte ranges)
//   tensors.bin    - concatenated little-endian float32 blobs, row-major
// Packs are immutable once written.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "laab/labels.hpp"
#include "laab/tensor.hpp"

namespace laab {

inline constexpr int kPackVersion = 1;

enum class Schema { raw, derived };
enum class FeatureKind { hidden, logits, attn };
enum class Split { train, val, test };

FeatureKind parse_feature_kind(std::string_view s);
std::string_view to_string(FeatureKind k) noexcept;
Schema parse_schema(std::string_view s);
std::string_view to_string(Schema s) noexcept;
Split parse_split(std::string_view s);
std::string_view to_string(Split s) noexcept;

struct PackManifest {
  int version = kPackVersion;
  std::string llm_name;
  std::size_t layer_count = 0;
  std::size_t head_count = 0;
  std::size_t hidden_dim = 0;
  Schema schema = Schema::derived;
  std::string dtype = "f32le";
  std::size_t seg_r = 4;
  std::size_t seg_j = 6;
  std::size_t sample_count = 0;
  // Derived packs only: which feature the f_r/f_j tensors hold and their
  // trailing widths (f_r of the logits kind is [n_tokens, width]).
  std::optional<FeatureKind> feature_kind;
  std::size_t f_r_width = 0;
  std::size_t f_j_width = 0;
  // Free-form provenance (head selection, K_val choice, synth config).
  nlohmann::json extra = nlohmann::json::object();
};

struct PackRecord {
  std::string id;
  int l_r = 0;
  Verdict o_j = Verdict::yes;
  int l_j = 0;
  std::size_t n_tokens_r = 1;
  std::optional<Split> split;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(std::string_view name) const;
  bool has(std::string_view name) const;
};

struct FeaturePack {
  PackManifest manifest;
  std::vector<PackRecord> records;
};

void write_pack(const FeaturePack& pack, const std::filesystem::path& dir);

// Structural load: manifest fields, byte ranges, shapes and label logic are
// checked; the first offending record is named in the CorruptPackError.
FeaturePack load_pack(const std::filesystem::path& dir);

struct PackIssue {
  std::string record_id;  // empty for pack-level issues
  std::string message;
};

// Structural load plus value checks (probability ranges, non-negative
// attention). An empty result means the pack is valid.
std::vector<PackIssue> validate_pack(const std::filesystem::path& dir);

struct Partition {
  std::vector<std::size_t> train, val, test;
};

// Seeded shuffle of positions [0, count) then contiguous cut by ratios.
Partition split(std::size_t count, std::array<double, 3> ratios, std::uint64_t seed);

inline constexpr std::array<double, 3> kDefaultSplit{0.7, 0.1, 0.2};

// Uses the records' stored split when every record has one, otherwise
// split(count, kDefaultSplit, seed).
Partition partition_pack(const FeaturePack& pack, std::uint64_t seed);

}  // namespace laab

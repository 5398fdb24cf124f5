#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "laab/pack.hpp"

namespace kit {

// Field-by-field comparison with bitwise tensor equality. On mismatch returns
// false and describes the first difference in `why`.
bool packs_identical(const laab::FeaturePack& a, const laab::FeaturePack& b, std::string* why);

// Reads records.jsonl directly and returns the id of the first record with a
// tensor reaching past `blob_size` bytes, or "" when every range fits.
std::string first_record_past(const std::filesystem::path& dir, std::uint64_t blob_size);

// Truncates tensors.bin by `bytes` and returns the new size.
std::uint64_t truncate_blob(const std::filesystem::path& dir, std::uint64_t bytes);

// Sprinkles signed zeros and subnormals into a pack's tensors.
void add_special_values(laab::FeaturePack& pack, std::uint64_t seed);

std::filesystem::path fresh_dir(const std::string& name);

}  // namespace kit

#include "packcheck.hpp"

#include <fstream>
#include <limits>

#include "json.hpp"
#include "laab/random.hpp"

namespace kit {

namespace fs = std::filesystem;

bool packs_identical(const laab::FeaturePack& a, const laab::FeaturePack& b, std::string* why) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  const auto& ma = a.manifest;
  const auto& mb = b.manifest;
  if (ma.version != mb.version || ma.llm_name != mb.llm_name || ma.layer_count != mb.layer_count ||
      ma.head_count != mb.head_count || ma.hidden_dim != mb.hidden_dim || ma.schema != mb.schema ||
      ma.dtype != mb.dtype || ma.seg_r != mb.seg_r || ma.seg_j != mb.seg_j ||
      ma.feature_kind != mb.feature_kind || ma.f_r_width != mb.f_r_width ||
      ma.f_j_width != mb.f_j_width || ma.extra != mb.extra)
    return fail("manifest differs");
  if (a.records.size() != b.records.size()) return fail("record count differs");
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& ra = a.records[i];
    const auto& rb = b.records[i];
    if (ra.id != rb.id || ra.l_r != rb.l_r || ra.o_j != rb.o_j || ra.l_j != rb.l_j ||
        ra.n_tokens_r != rb.n_tokens_r || ra.split != rb.split)
      return fail("record " + ra.id + " labels differ");
    if (ra.tensors.size() != rb.tensors.size()) return fail("record " + ra.id + " tensor count");
    for (std::size_t t = 0; t < ra.tensors.size(); ++t) {
      if (ra.tensors[t].first != rb.tensors[t].first ||
          !laab::bit_identical(ra.tensors[t].second, rb.tensors[t].second))
        return fail("record " + ra.id + " tensor " + ra.tensors[t].first);
    }
  }
  return true;
}

std::string first_record_past(const fs::path& dir, std::uint64_t blob_size) {
  std::ifstream in(dir / "records.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    for (const auto& [name, spec] : j.at("tensors").items()) {
      const auto end = spec.at("offset").get<std::uint64_t>() + spec.at("nbytes").get<std::uint64_t>();
      if (end > blob_size) return j.at("id").get<std::string>();
    }
  }
  return "";
}

std::uint64_t truncate_blob(const fs::path& dir, std::uint64_t bytes) {
  const auto blob = dir / "tensors.bin";
  const auto size = fs::file_size(blob);
  const auto keep = size > bytes ? size - bytes : 0;
  fs::resize_file(blob, keep);
  return keep;
}

void add_special_values(laab::FeaturePack& pack, std::uint64_t seed) {
  laab::Rng rng(seed);
  const float specials[] = {-0.0f, std::numeric_limits<float>::denorm_min(),
                            -std::numeric_limits<float>::denorm_min(), 1e-40f,
                            std::numeric_limits<float>::min()};
  for (auto& r : pack.records)
    for (auto& [name, t] : r.tensors)
      if (!t.empty() && rng.bernoulli(0.3))
        t[rng.below(t.numel())] = specials[rng.below(std::size(specials))];
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("laab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace kit

#include "laab/pack.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "laab/error.hpp"
#include "laab/random.hpp"

namespace laab {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "tensors.bin is little-endian float32; add byte swapping for this target");

FeatureKind parse_feature_kind(std::string_view s) {
  if (s == "hidden") return FeatureKind::hidden;
  if (s == "logits") return FeatureKind::logits;
  if (s == "attn") return FeatureKind::attn;
  throw ValidationError("unknown feature kind '" + std::string(s) +
                        "' (expected hidden, logits or attn)");
}

std::string_view to_string(FeatureKind k) noexcept {
  switch (k) {
    case FeatureKind::hidden: return "hidden";
    case FeatureKind::logits: return "logits";
    case FeatureKind::attn: return "attn";
  }
  return "?";
}

Schema parse_schema(std::string_view s) {
  if (s == "raw") return Schema::raw;
  if (s == "derived") return Schema::derived;
  throw ValidationError("unknown pack schema '" + std::string(s) + "'");
}

std::string_view to_string(Schema s) noexcept { return s == Schema::raw ? "raw" : "derived"; }

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

const Tensor& PackRecord::tensor(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CorruptPackError(id, "missing tensor '" + std::string(name) + "'");
}

bool PackRecord::has(std::string_view name) const {
  return std::any_of(tensors.begin(), tensors.end(),
                     [&](const auto& p) { return p.first == name; });
}

namespace {

json manifest_to_json(const PackManifest& m) {
  json j;
  j["version"] = m.version;
  j["llm_name"] = m.llm_name;
  j["layer_count"] = m.layer_count;
  j["head_count"] = m.head_count;
  j["hidden_dim"] = m.hidden_dim;
  j["schema"] = to_string(m.schema);
  j["dtype"] = m.dtype;
  j["seg_r"] = m.seg_r;
  j["seg_j"] = m.seg_j;
  j["sample_count"] = m.sample_count;
  if (m.feature_kind) {
    j["feature_kind"] = to_string(*m.feature_kind);
    j["f_r_width"] = m.f_r_width;
    j["f_j_width"] = m.f_j_width;
  }
  j["extra"] = m.extra;
  return j;
}

PackManifest manifest_from_json(const json& j) {
  PackManifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != kPackVersion) {
      throw ValidationError("unsupported pack version " + std::to_string(m.version));
    }
    m.llm_name = j.at("llm_name").get<std::string>();
    m.layer_count = j.at("layer_count").get<std::size_t>();
    m.head_count = j.at("head_count").get<std::size_t>();
    m.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    m.schema = parse_schema(j.at("schema").get<std::string>());
    m.dtype = j.at("dtype").get<std::string>();
    m.seg_r = j.at("seg_r").get<std::size_t>();
    m.seg_j = j.at("seg_j").get<std::size_t>();
    m.sample_count = j.at("sample_count").get<std::size_t>();
    if (j.contains("feature_kind")) {
      m.feature_kind = parse_feature_kind(j.at("feature_kind").get<std::string>());
      m.f_r_width = j.at("f_r_width").get<std::size_t>();
      m.f_j_width = j.at("f_j_width").get<std::size_t>();
    }
    if (j.contains("extra")) m.extra = j.at("extra");
  } catch (const json::exception& e) {
    throw CorruptPackError("<manifest>", e.what());
  }
  if (m.dtype != "f32le") throw CorruptPackError("<manifest>", "dtype must be f32le");
  if (m.seg_r != 4 || m.seg_j != 6) {
    throw CorruptPackError("<manifest>", "segment counts must be seg_r=4, seg_j=6");
  }
  if (m.schema == Schema::derived && !m.feature_kind) {
    throw CorruptPackError("<manifest>", "derived pack without feature_kind");
  }
  return m;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void expect_shape(const PackRecord& r, std::string_view name, const Shape& want) {
  const auto& got = r.tensor(name).shape();
  if (got != want) {
    throw CorruptPackError(r.id, "tensor '" + std::string(name) + "' has shape " +
                                     shape_str(got) + ", expected " + shape_str(want));
  }
}

void check_record_shapes(const PackManifest& m, const PackRecord& r) {
  if (m.schema == Schema::raw) {
    const std::size_t heads = m.layer_count * m.head_count;
    expect_shape(r, "hidden_r", {8, m.hidden_dim});
    expect_shape(r, "hidden_j", {8, m.hidden_dim});
    expect_shape(r, "logits_r", {r.n_tokens_r, m.layer_count});
    expect_shape(r, "yes_j", {m.layer_count});
    expect_shape(r, "no_j", {m.layer_count});
    expect_shape(r, "seg_attn_r", {heads, r.n_tokens_r, m.seg_r});
    expect_shape(r, "seg_attn_j", {heads, 1, m.seg_j});
    return;
  }
  const Tensor& fr = r.tensor("f_r");
  const Tensor& fj = r.tensor("f_j");
  if (*m.feature_kind == FeatureKind::logits) {
    expect_shape(r, "f_r", {r.n_tokens_r, m.f_r_width});
  } else if (fr.rank() != 1 || fr.numel() != m.f_r_width) {
    throw CorruptPackError(r.id, "f_r has shape " + shape_str(fr.shape()) + ", expected [" +
                                     std::to_string(m.f_r_width) + "]");
  }
  if (fj.rank() != 1 || fj.numel() != m.f_j_width) {
    throw CorruptPackError(r.id, "f_j has shape " + shape_str(fj.shape()) + ", expected [" +
                                     std::to_string(m.f_j_width) + "]");
  }
}

}  // namespace

void write_pack(const FeaturePack& pack, const fs::path& dir) {
  fs::create_directories(dir);
  PackManifest m = pack.manifest;
  m.sample_count = pack.records.size();

  std::ofstream blob(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
  std::ofstream recs(dir / "records.jsonl", std::ios::trunc);
  if (!blob || !recs) throw IoError("cannot write pack into " + dir.string());

  std::set<std::string> ids;
  std::uint64_t offset = 0;
  for (const auto& r : pack.records) {
    if (!ids.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
    require_binary_label(r.l_r, "l_r");
    if (r.l_j != derive_lj(r.l_r, r.o_j)) {
      throw ValidationError("record '" + r.id + "': l_j inconsistent with l_r and o_j");
    }
    ordered_json j;
    j["id"] = r.id;
    j["l_r"] = r.l_r;
    j["o_j"] = to_string(r.o_j);
    j["l_j"] = r.l_j;
    j["n_tokens_r"] = r.n_tokens_r;
    if (r.split) j["split"] = to_string(*r.split);
    ordered_json tensors = ordered_json::object();
    for (const auto& [name, t] : r.tensors) {
      const std::uint64_t nbytes = t.numel() * sizeof(float);
      tensors[name] = {{"offset", offset}, {"nbytes", nbytes}, {"shape", t.shape()}};
      blob.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(nbytes));
      offset += nbytes;
    }
    j["tensors"] = std::move(tensors);
    recs << j.dump() << '\n';
  }
  std::ofstream man(dir / "manifest.json", std::ios::trunc);
  man << manifest_to_json(m).dump(2) << '\n';
  if (!blob || !recs || !man) throw IoError("short write into " + dir.string());
}

FeaturePack load_pack(const fs::path& dir) {
  FeaturePack pack;
  json mj;
  try {
    mj = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw CorruptPackError("<manifest>", e.what());
  }
  pack.manifest = manifest_from_json(mj);
  const std::string blob = read_file(dir / "tensors.bin");

  std::ifstream recs(dir / "records.jsonl");
  if (!recs) throw IoError("cannot open " + (dir / "records.jsonl").string());
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  std::uint64_t consumed = 0;
  while (std::getline(recs, line)) {
    ++lineno;
    if (line.empty()) continue;
    PackRecord r;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
      r.id = j.at("id").get<std::string>();
    } catch (const json::exception& e) {
      throw CorruptPackError("<line " + std::to_string(lineno) + ">", e.what());
    }
    try {
      r.l_r = j.at("l_r").get<int>();
      r.o_j = parse_verdict(j.at("o_j").get<std::string>());
      r.l_j = j.at("l_j").get<int>();
      r.n_tokens_r = j.at("n_tokens_r").get<std::size_t>();
      if (j.contains("split")) r.split = parse_split(j.at("split").get<std::string>());
      require_binary_label(r.l_r, "l_r");
      require_binary_label(r.l_j, "l_j");
      if (r.l_j != derive_lj(r.l_r, r.o_j)) {
        throw ValidationError("l_j " + std::to_string(r.l_j) + " contradicts l_r " +
                              std::to_string(r.l_r) + " with o_j \"" +
                              std::string(to_string(r.o_j)) + "\"");
      }
      if (r.n_tokens_r < 1) throw ValidationError("n_tokens_r must be at least 1");
      for (const auto& [name, spec] : j.at("tensors").items()) {
        const auto offset = spec.at("offset").get<std::uint64_t>();
        const auto nbytes = spec.at("nbytes").get<std::uint64_t>();
        Shape shape = spec.at("shape").get<Shape>();
        if (nbytes != shape_numel(shape) * sizeof(float)) {
          throw ValidationError("tensor '" + name + "' byte length " + std::to_string(nbytes) +
                                " does not match shape " + shape_str(shape));
        }
        if (offset > blob.size() || nbytes > blob.size() - offset) {
          throw ValidationError("tensor '" + name + "' range [" + std::to_string(offset) +
                                "," + std::to_string(offset + nbytes) +
                                ") exceeds blob of " + std::to_string(blob.size()) + " bytes");
        }
        std::vector<float> data(nbytes / sizeof(float));
        std::memcpy(data.data(), blob.data() + offset, nbytes);
        consumed += nbytes;
        r.tensors.emplace_back(name, Tensor(std::move(shape), std::move(data)));
      }
    } catch (const CorruptPackError&) {
      throw;
    } catch (const json::exception& e) {
      throw CorruptPackError(r.id, e.what());
    } catch (const ValidationError& e) {
      throw CorruptPackError(r.id, e.what());
    }
    if (!ids.insert(r.id).second) throw CorruptPackError(r.id, "duplicate record id");
    check_record_shapes(pack.manifest, r);
    pack.records.push_back(std::move(r));
  }
  if (pack.records.size() != pack.manifest.sample_count) {
    throw CorruptPackError("<manifest>", "sample_count " +
                                             std::to_string(pack.manifest.sample_count) +
                                             " but " + std::to_string(pack.records.size()) +
                                             " records");
  }
  if (consumed != blob.size()) {
    throw CorruptPackError("<blob>", "records reference " + std::to_string(consumed) +
                                         " bytes but tensors.bin holds " +
                                         std::to_string(blob.size()));
  }
  return pack;
}

std::vector<PackIssue> validate_pack(const fs::path& dir) {
  std::vector<PackIssue> issues;
  FeaturePack pack;
  try {
    pack = load_pack(dir);
  } catch (const CorruptPackError& e) {
    issues.push_back({e.record_id(), e.what()});
    return issues;
  } catch (const Error& e) {
    issues.push_back({"", e.what()});
    return issues;
  }
  auto in_unit = [](const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(),
                       [](float v) { return v >= 0.0f && v <= 1.0f; });
  };
  auto non_negative = [](const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](float v) { return v >= 0.0f; });
  };
  for (const auto& r : pack.records) {
    for (const auto& [name, t] : r.tensors) {
      if (!t.all_finite()) issues.push_back({r.id, "non-finite values in '" + name + "'"});
    }
    if (pack.manifest.schema != Schema::raw) continue;
    for (const char* name : {"logits_r", "yes_j", "no_j"}) {
      if (!in_unit(r.tensor(name))) {
        issues.push_back({r.id, std::string("probabilities outside [0,1] in '") + name + "'"});
      }
    }
    const Tensor& y = r.tensor("yes_j");
    const Tensor& n = r.tensor("no_j");
    for (std::size_t i = 0; i < y.numel(); ++i) {
      if (y[i] + n[i] > 1.0f + 1e-5f) {
        issues.push_back({r.id, "yes_j + no_j exceeds 1 at layer " + std::to_string(i)});
        break;
      }
    }
    for (const char* name : {"seg_attn_r", "seg_attn_j"}) {
      if (!non_negative(r.tensor(name))) {
        issues.push_back({r.id, std::string("negative attention in '") + name + "'"});
      }
    }
  }
  return issues;
}

Partition split(std::size_t count, std::array<double, 3> ratios, std::uint64_t seed) {
  if (count == 0) throw ValidationError("split: empty input");
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 ||
      std::any_of(ratios.begin(), ratios.end(), [](double r) { return r < 0.0; })) {
    throw ValidationError("split: ratios must be non-negative and sum to 1");
  }
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto n = static_cast<double>(count);
  auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * n));
  auto n_val = static_cast<std::size_t>(std::llround(ratios[1] * n));
  n_train = std::min(n_train, count);
  n_val = std::min(n_val, count - n_train);
  Partition p;
  p.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  p.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  p.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return p;
}

Partition partition_pack(const FeaturePack& pack, std::uint64_t seed) {
  const auto& recs = pack.records;
  const bool stored = !recs.empty() && std::all_of(recs.begin(), recs.end(),
                                                   [](const PackRecord& r) { return r.split; });
  if (!stored) return split(recs.size(), kDefaultSplit, seed);
  Partition p;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    switch (*recs[i].split) {
      case Split::train: p.train.push_back(i); break;
      case Split::val: p.val.push_back(i); break;
      case Split::test: p.test.push_back(i); break;
    }
  }
  return p;
}

}  // namespace laab

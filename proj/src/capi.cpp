#include "laab/laab.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "laab/commands.hpp"
#include "laab/error.hpp"

using nlohmann::json;

struct laab_pack {
  laab::FeaturePack pack;
};

struct laab_model {
  laab::Model model;
};

namespace {

thread_local std::string g_last_error;

laab_status fail(laab_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

// Maps the engine's exception hierarchy onto status codes.
template <class Fn>
laab_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return LAAB_OK;
  } catch (const laab::CorruptPackError& e) {
    return fail(LAAB_ERR_VALIDATION, "record '" + e.record_id() + "': " + e.what());
  } catch (const laab::NumericError& e) {
    return fail(LAAB_ERR_NUMERIC, e.what());
  } catch (const laab::IoError& e) {
    return fail(LAAB_ERR_IO, e.what());
  } catch (const laab::ShapeError& e) {
    return fail(LAAB_ERR_VALIDATION, e.what());
  } catch (const laab::ValidationError& e) {
    return fail(LAAB_ERR_VALIDATION, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(LAAB_ERR_IO, e.what());
  } catch (const json::exception& e) {
    return fail(LAAB_ERR_VALIDATION, e.what());
  } catch (const std::exception& e) {
    return fail(LAAB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(LAAB_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_arg(const char* text, const char* what) {
  if (!text) return json::object();
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw laab::ValidationError(std::string(what) + ": " + e.what());
  }
}

laab::TrainConfig config_from(const char* text) {
  return laab::TrainConfig::from_json(parse_arg(text, "training config"));
}

}  // namespace

#define LAAB_REQUIRE(cond, msg) \
  if (!(cond)) return fail(LAAB_ERR_INVALID_ARGUMENT, msg)

extern "C" {

const char* laab_last_error(void) { return g_last_error.c_str(); }

const char* laab_version(void) { return "1.0.0"; }

void laab_string_free(char* s) { std::free(s); }

laab_status laab_pack_open(const char* dir, laab_pack** out) {
  LAAB_REQUIRE(dir && out, "laab_pack_open: null argument");
  *out = nullptr;
  return guarded([&] { *out = new laab_pack{laab::load_pack(dir)}; });
}

void laab_pack_close(laab_pack* pack) { delete pack; }

laab_status laab_pack_info_json(const laab_pack* pack, char** out_json) {
  LAAB_REQUIRE(pack && out_json, "laab_pack_info_json: null argument");
  return guarded([&] {
    const auto& m = pack->pack.manifest;
    json j = {{"version", m.version},
              {"llm_name", m.llm_name},
              {"layer_count", m.layer_count},
              {"head_count", m.head_count},
              {"hidden_dim", m.hidden_dim},
              {"schema", laab::to_string(m.schema)},
              {"sample_count", pack->pack.records.size()}};
    if (m.feature_kind) j["feature_kind"] = laab::to_string(*m.feature_kind);
    std::size_t counts[2] = {0, 0};
    for (const auto& r : pack->pack.records) ++counts[r.l_r];
    j["l_r_counts"] = {counts[0], counts[1]};
    *out_json = dup_string(j.dump());
  });
}

laab_status laab_validate_pack(const char* dir, char** out_issues_json) {
  LAAB_REQUIRE(dir && out_issues_json, "laab_validate_pack: null argument");
  *out_issues_json = nullptr;
  bool found = false;
  const laab_status s = guarded([&] {
    if (!std::filesystem::is_directory(dir)) {
      throw laab::IoError(std::string("no pack directory at ") + dir);
    }
    const auto issues = laab::validate_pack(dir);
    json arr = json::array();
    for (const auto& i : issues) arr.push_back({{"record_id", i.record_id}, {"message", i.message}});
    *out_issues_json = dup_string(arr.dump());
    found = !issues.empty();
  });
  if (s != LAAB_OK) return s;
  return found ? fail(LAAB_ERR_VALIDATION, "pack has validation issues") : LAAB_OK;
}

laab_status laab_synth(const char* config_json, const char* out_dir) {
  LAAB_REQUIRE(config_json && out_dir, "laab_synth: null argument");
  return guarded([&] { laab::synth_to_dir(parse_arg(config_json, "synth config"), out_dir); });
}

laab_status laab_derive(const char* raw_dir, const char* out_dir, const char* options_json,
                        char** out_summary_json) {
  LAAB_REQUIRE(raw_dir && out_dir, "laab_derive: null argument");
  return guarded([&] {
    const json o = parse_arg(options_json, "derive options");
    laab::features::DeriveOptions opt;
    opt.kind = laab::parse_feature_kind(o.value("feature", std::string("hidden")));
    opt.top_p = o.value("top_p", opt.top_p);
    opt.top_p_judgment = o.value("top_p_judgment", opt.top_p_judgment);
    const std::string est = o.value("kl_estimator", std::string("mean"));
    if (est == "mean") {
      opt.estimator = laab::features::KlEstimator::mean_distribution;
    } else if (est == "per_sample") {
      opt.estimator = laab::features::KlEstimator::per_sample;
    } else {
      throw laab::ValidationError("kl_estimator must be 'mean' or 'per_sample'");
    }
    opt.kval_r = o.value("kval_r", opt.kval_r);
    opt.kval_j = o.value("kval_j", opt.kval_j);
    if (opt.kval_r >= laab::features::kCandidateLayers ||
        opt.kval_j >= laab::features::kCandidateLayers) {
      throw laab::ValidationError("kval must index one of the 8 candidate layers (0-7)");
    }
    opt.split_seed = o.value("seed", opt.split_seed);
    const auto outcome = laab::derive_to_dir(raw_dir, out_dir, opt);
    if (out_summary_json) *out_summary_json = dup_string(laab::derive_summary(outcome).dump());
  });
}

laab_status laab_select_layer(const char* raw_dir, const char* config_json, char** out_json) {
  LAAB_REQUIRE(raw_dir && out_json, "laab_select_layer: null argument");
  return guarded([&] {
    *out_json = dup_string(laab::select_layer(raw_dir, config_from(config_json)).dump());
  });
}

laab_status laab_train(const char* pack_dir, const char* feature, const char* config_json,
                       const char* out_dir, int use_logic, char** out_summary_json) {
  LAAB_REQUIRE(pack_dir && out_dir, "laab_train: null argument");
  return guarded([&] {
    std::optional<laab::FeatureKind> kind;
    if (feature) kind = laab::parse_feature_kind(feature);
    const json summary =
        laab::train_to_dir(pack_dir, kind, config_from(config_json), out_dir, use_logic != 0);
    if (out_summary_json) *out_summary_json = dup_string(summary.dump());
  });
}

laab_status laab_model_load(const char* ckpt_dir, laab_model** out) {
  LAAB_REQUIRE(ckpt_dir && out, "laab_model_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new laab_model{laab::load_model(ckpt_dir)}; });
}

void laab_model_free(laab_model* model) { delete model; }

laab_status laab_predict(const laab_model* model, const laab_pack* pack, const char* mode,
                         char** out_jsonl) {
  LAAB_REQUIRE(model && pack && mode && out_jsonl, "laab_predict: null argument");
  return guarded([&] {
    const auto rows = laab::predict(model->model, pack->pack, laab::parse_inference_mode(mode));
    std::string text;
    for (const auto& r : rows) text += r.dump() + '\n';
    *out_jsonl = dup_string(text);
  });
}

laab_status laab_evaluate(const laab_model* model, const laab_pack* pack,
                          const laab_model* baseline, const char* split, char** out_report_json,
                          char** out_table) {
  LAAB_REQUIRE(model && pack && out_report_json, "laab_evaluate: null argument");
  return guarded([&] {
    std::optional<laab::Split> s;
    if (split) s = laab::parse_split(split);
    const auto ev = laab::evaluate_model(model->model, pack->pack,
                                         baseline ? &baseline->model : nullptr, s);
    *out_report_json = dup_string(ev.report.dump(2));
    if (out_table) *out_table = dup_string(ev.table);
  });
}

}  // extern "C"

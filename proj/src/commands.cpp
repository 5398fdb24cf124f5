#include "laab/commands.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "laab/error.hpp"
#include "laab/metrics.hpp"
#include "laab/synth.hpp"

namespace laab {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const fs::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("short write to " + file.string());
}

std::vector<std::size_t> indices_of(const FeaturePack& pack, std::optional<Split> only,
                                    std::uint64_t seed) {
  if (!only) {
    std::vector<std::size_t> all(pack.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  if (pack.records.empty()) return {};
  const Partition p = partition_pack(pack, seed);
  switch (*only) {
    case Split::train: return p.train;
    case Split::val: return p.val;
    case Split::test: return p.test;
  }
  return {};
}

std::vector<int> labels_of(const std::vector<Prediction>& p) {
  std::vector<int> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i].label;
  return out;
}

std::string pad(const std::string& s, std::size_t width, bool right) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return right ? fill + s : s + fill;
}

std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) out += "  ";
      out += pad(r[c], width[c], c > 0);
    }
    out += '\n';
  }
  return out;
}

std::string bin_name(const LengthBin& b) {
  const bool open = b.hi == std::numeric_limits<std::size_t>::max();
  return "(" + std::to_string(b.lo) + "," + (open ? std::string("inf)") : std::to_string(b.hi) + "]");
}

}  // namespace

// ---- config -----------------------------------------------------------------

TrainConfig TrainConfig::from_json(const json& j) {
  static const std::set<std::string> known{
      "feature_kind", "hidden_dims_r", "hidden_dims_j", "lr_grid",   "joint_lr",
      "batch_size",   "patience",      "max_epochs",    "seed",      "delta",
      "eps",          "alpha_clamp",   "top_p"};
  if (!j.is_object()) throw ValidationError("training config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError("training config: unknown field '" + key + "'");
  }
  TrainConfig c;
  try {
    if (j.contains("feature_kind")) {
      c.feature_kind = parse_feature_kind(j.at("feature_kind").get<std::string>());
    }
    c.hidden_dims_r = j.value("hidden_dims_r", c.hidden_dims_r);
    c.hidden_dims_j = j.value("hidden_dims_j", c.hidden_dims_j);
    c.plan.lr_grid = j.value("lr_grid", c.plan.lr_grid);
    c.plan.joint_lr = j.value("joint_lr", c.plan.joint_lr);
    c.plan.batch_size = j.value("batch_size", c.plan.batch_size);
    c.plan.patience = j.value("patience", c.plan.patience);
    c.plan.max_epochs = j.value("max_epochs", c.plan.max_epochs);
    c.plan.seed = j.value("seed", c.plan.seed);
    c.logic.delta = j.value("delta", c.logic.delta);
    c.logic.eps = j.value("eps", c.logic.eps);
    c.logic.alpha_clamp = j.value("alpha_clamp", c.logic.alpha_clamp);
    c.top_p = j.value("top_p", c.top_p);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("training config: ") + e.what());
  }
  if (!(c.logic.delta > 0.0)) throw ValidationError("training config: delta must be positive");
  if (!(c.logic.eps > 0.0)) throw ValidationError("training config: eps must be positive");
  if (!(c.logic.alpha_clamp >= 0.0)) throw ValidationError("training config: alpha_clamp < 0");
  if (!(c.top_p > 0.0 && c.top_p <= 1.0)) throw ValidationError("training config: top_p in (0,1]");
  if (c.plan.patience < 1) throw ValidationError("training config: patience must be >= 1");
  if (c.plan.batch_size < 1) throw ValidationError("training config: batch_size must be >= 1");
  if (c.plan.max_epochs < 1) throw ValidationError("training config: max_epochs must be >= 1");
  return c;
}

json TrainConfig::to_json() const {
  json j;
  if (feature_kind) j["feature_kind"] = to_string(*feature_kind);
  j["hidden_dims_r"] = hidden_dims_r;
  j["hidden_dims_j"] = hidden_dims_j;
  j["lr_grid"] = plan.lr_grid;
  j["joint_lr"] = plan.joint_lr;
  j["batch_size"] = plan.batch_size;
  j["patience"] = plan.patience;
  j["max_epochs"] = plan.max_epochs;
  j["seed"] = plan.seed;
  j["delta"] = logic.delta;
  j["eps"] = logic.eps;
  j["alpha_clamp"] = logic.alpha_clamp;
  j["top_p"] = top_p;
  return j;
}

TrainConfig load_train_config(const fs::path& file) {
  return TrainConfig::from_json(read_json_file(file));
}

// ---- pack commands ----------------------------------------------------------

void synth_to_dir(const json& config, const fs::path& out) {
  write_pack(synth_generate(SynthConfig::from_json(config)), out);
}

features::DeriveOutcome derive_to_dir(const fs::path& raw, const fs::path& out,
                                      const features::DeriveOptions& options) {
  auto outcome = features::derive_pack(load_pack(raw), options);
  write_pack(outcome.pack, out);
  return outcome;
}

json derive_summary(const features::DeriveOutcome& outcome) {
  json j;
  j["feature_kind"] = to_string(*outcome.pack.manifest.feature_kind);
  j["samples"] = outcome.pack.records.size();
  j["excluded"] = outcome.excluded;
  j["f_r_width"] = outcome.pack.manifest.f_r_width;
  j["f_j_width"] = outcome.pack.manifest.f_j_width;
  if (outcome.heads_r) j["heads_r"] = outcome.heads_r->selected;
  if (outcome.heads_j) j["heads_j"] = outcome.heads_j->selected;
  return j;
}

json select_layer(const fs::path& raw_dir, const TrainConfig& cfg) {
  const FeaturePack raw = load_pack(raw_dir);
  std::vector<double> score_r, score_j;
  LogicLossConfig plain = cfg.logic;
  plain.enabled = false;
  for (std::size_t k = 0; k < features::kCandidateLayers; ++k) {
    features::DeriveOptions opt;
    opt.kind = FeatureKind::hidden;
    opt.kval_r = opt.kval_j = k;
    opt.split_seed = cfg.plan.seed;
    const auto derived = features::derive_pack(raw, opt);
    const auto part = partition_pack(derived.pack, cfg.plan.seed);
    const auto train = SampleSet::from_pack(derived.pack, part.train);
    const auto val = SampleSet::from_pack(derived.pack, part.val);
    if (train.size() == 0 || val.size() == 0) {
      throw ValidationError("select-layer needs non-empty train and val splits");
    }
    const double lr = cfg.plan.lr_grid.at(0);
    auto pair = build_pair(train, cfg.hidden_dims_r, cfg.hidden_dims_j, cfg.plan.seed, lr,
                           cfg.plan.weight_decay);
    TrainReport report;
    stage1_train(pair, train, val, cfg.plan, lr, plain, report);
    auto lr_hat = labels_of(infer(InferenceMode::response, pair.r.detector, pair.j.detector, val));
    score_r.push_back(macro_f1(lr_hat, val.l_r));
    const auto pj = pair.j.detector.predict_proba(val.batch_j(val.all()));
    score_j.push_back(macro_f1(predict_labels(pj), val.l_j));
  }
  const std::vector<std::size_t> layers = features::quantile_layers(raw.manifest.layer_count);
  const std::size_t kr = features::select_kval(score_r);
  const std::size_t kj = features::select_kval(score_j);
  return {{"candidate_layers", layers},
          {"val_macro_f1_r", score_r},
          {"val_macro_f1_j", score_j},
          {"kval_r", kr},
          {"kval_j", kj},
          {"layer_r", layers.at(kr)},
          {"layer_j", layers.at(kj)}};
}

// ---- training ---------------------------------------------------------------

SampleSet load_samples(const FeaturePack& pack, std::optional<Split> only, std::uint64_t seed) {
  const auto idx = indices_of(pack, only, seed);
  return SampleSet::from_pack(pack, idx);
}

json train_to_dir(const fs::path& pack_dir, std::optional<FeatureKind> feature, TrainConfig cfg,
                  const fs::path& out, bool use_logic) {
  if (feature && cfg.feature_kind && *feature != *cfg.feature_kind) {
    throw ValidationError("--feature disagrees with feature_kind in the training config");
  }
  if (!feature) feature = cfg.feature_kind;

  FeaturePack pack = load_pack(pack_dir);
  fs::create_directories(out);
  if (pack.manifest.schema == Schema::raw) {
    if (!feature) throw ValidationError("a raw pack needs --feature to derive features");
    features::DeriveOptions opt;
    opt.kind = *feature;
    opt.top_p = cfg.top_p;
    opt.split_seed = cfg.plan.seed;
    auto outcome = features::derive_pack(pack, opt);
    write_pack(outcome.pack, out / "derived");
    pack = std::move(outcome.pack);
  } else if (feature && *feature != *pack.manifest.feature_kind) {
    throw ValidationError("pack holds '" + std::string(to_string(*pack.manifest.feature_kind)) +
                          "' features, not '" + std::string(to_string(*feature)) + "'");
  }
  cfg.feature_kind = pack.manifest.feature_kind;

  const Partition part = partition_pack(pack, cfg.plan.seed);
  const auto train = SampleSet::from_pack(pack, part.train);
  const auto val = SampleSet::from_pack(pack, part.val);
  if (train.size() == 0 || val.size() == 0) {
    throw ValidationError("training needs non-empty train and val splits");
  }
  LogicLossConfig logic = cfg.logic;
  logic.enabled = use_logic;
  TrainOutcome result = train_laab(train, val, cfg.plan, logic, cfg.hidden_dims_r, cfg.hidden_dims_j);

  Model model{result.pair.r.detector.clone(), result.pair.j.detector.clone(), cfg.to_json()};
  if (!part.test.empty()) {
    result.report.evaluation = evaluate_model(model, pack, nullptr, Split::test).report;
  }
  json meta = {{"use_logic", use_logic},
               {"chosen_lr", result.report.chosen_lr},
               {"feature_kind", to_string(*cfg.feature_kind)}};
  meta["best_val_ce"] = result.report.best_val_ce_r;
  save_checkpoint(result.pair.r.detector, meta, out / "detector_r.ckpt");
  meta["best_val_ce"] = result.report.best_val_ce_j;
  save_checkpoint(result.pair.j.detector, meta, out / "detector_j.ckpt");
  json report = result.report.to_json();
  report["use_logic"] = use_logic;
  write_json_file(report, out / "report.json");
  json saved = cfg.to_json();
  write_json_file(saved, out / "config.json");

  json summary = {{"chosen_lr", result.report.chosen_lr},
                  {"best_val_ce_r", result.report.best_val_ce_r},
                  {"best_val_ce_j", result.report.best_val_ce_j},
                  {"stop_epoch_r", result.report.stop_epoch_r},
                  {"stop_epoch_j", result.report.stop_epoch_j},
                  {"stage2_epochs", result.report.stage2_epochs}};
  if (!result.report.evaluation.empty()) {
    for (const auto& [mode, e] : result.report.evaluation.at("modes").items()) {
      summary["test"][mode] = {{"macro_f1", e.at("macro_f1")}, {"accuracy", e.at("accuracy")}};
    }
  }
  return summary;
}

Model load_model(const fs::path& dir) {
  auto r = load_checkpoint(dir / "detector_r.ckpt");
  auto j = load_checkpoint(dir / "detector_j.ckpt");
  if (r.detector.config().role != Role::response || j.detector.config().role != Role::judgment) {
    throw ValidationError("checkpoint directory holds detectors with swapped roles");
  }
  json cfg = fs::exists(dir / "config.json") ? read_json_file(dir / "config.json") : json::object();
  return {std::move(r.detector), std::move(j.detector), std::move(cfg)};
}

// ---- inference --------------------------------------------------------------

namespace {

void check_compatible(const Model& model, const FeaturePack& pack) {
  if (pack.manifest.schema != Schema::derived) {
    throw ValidationError("inference needs a derived pack; run `laab derive` first");
  }
  if (*pack.manifest.feature_kind != model.d_r.config().feature_kind) {
    throw ValidationError("pack holds '" + std::string(to_string(*pack.manifest.feature_kind)) +
                          "' features but the detectors were trained on '" +
                          std::string(to_string(model.d_r.config().feature_kind)) + "'");
  }
}

std::uint64_t model_seed(const Model& m) { return m.config.value("seed", std::uint64_t{0}); }

}  // namespace

std::vector<json> predict(const Model& model, const FeaturePack& pack, InferenceMode mode) {
  check_compatible(model, pack);
  const SampleSet set = load_samples(pack);
  const auto preds = infer(mode, model.d_r, model.d_j, set);
  std::vector<json> out;
  out.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out.push_back({{"id", set.ids[i]},
                   {"label", preds[i].label},
                   {"s_hallu", preds[i].s_hallu},
                   {"s_real", preds[i].s_real}});
  }
  return out;
}

Evaluation evaluate_model(const Model& model, const FeaturePack& pack, const Model* baseline,
                          std::optional<Split> split) {
  check_compatible(model, pack);
  const SampleSet set = load_samples(pack, split, model_seed(model));
  if (set.size() == 0) throw ValidationError("nothing to evaluate: the selected split is empty");

  Evaluation ev;
  json& rep = ev.report;
  rep["split"] = split ? std::string(to_string(*split)) : std::string("all");
  rep["count"] = set.size();
  std::vector<std::vector<std::string>> rows{{"mode", "macro_f1", "accuracy", "n"}};
  std::vector<int> r_labels, dj_labels;
  for (auto [mode, name] : {std::pair{InferenceMode::response, "r"},
                            std::pair{InferenceMode::judgment_only, "dj"},
                            std::pair{InferenceMode::fused, "fused"}}) {
    const auto labels = labels_of(infer(mode, model.d_r, model.d_j, set));
    const EvalResult e = evaluate(labels, set.l_r);
    rep["modes"][name] = e.to_json();
    rows.push_back({name, format_percent(e.macro_f1), format_percent(e.accuracy),
                    std::to_string(e.count)});
    if (mode == InferenceMode::response) r_labels = labels;
    if (mode == InferenceMode::judgment_only) dj_labels = labels;
  }
  ev.table = render_table(rows);

  const auto bins = length_breakdown(r_labels, set.l_r, set.n_tokens);
  std::vector<std::vector<std::string>> len_rows{{"length", "n", "accuracy"}};
  json jb = json::array();
  for (const auto& b : bins) {
    jb.push_back({{"bin", bin_name(b)}, {"count", b.count}, {"accuracy", b.accuracy}});
    len_rows.push_back({bin_name(b), std::to_string(b.count), format_percent(b.accuracy)});
  }
  rep["length_breakdown"] = std::move(jb);
  ev.table += "\n" + render_table(len_rows);

  if (baseline) {
    check_compatible(*baseline, pack);
    const auto base = labels_of(infer(InferenceMode::response, baseline->d_r, baseline->d_j, set));
    const auto t = transition_report(base, r_labels, dj_labels, set.l_r);
    rep["transitions"] = t.to_json();
    std::vector<std::vector<std::string>> t_rows{{"source", "size", "to_correct", "to_incorrect"}};
    for (int s = 0; s < 4; ++s) {
      t_rows.push_back({TransitionReport::kSourceNames[s], std::to_string(t.source_size(s)),
                        std::to_string(t.to_correct[s]), std::to_string(t.to_incorrect[s])});
    }
    ev.table += "\n" + render_table(t_rows);
  }
  return ev;
}

}  // namespace laab

// Command-line front end. Talks to the engine only through the C API.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "laab/laab.h"

namespace {

int exit_code(laab_status s) {
  switch (s) {
    case LAAB_OK: return 0;
    case LAAB_ERR_NUMERIC: return 3;
    case LAAB_ERR_INTERNAL: return 1;
    default: return 2;
  }
}

int finish(laab_status s) {
  if (s != LAAB_OK) std::cerr << "laab: " << laab_last_error() << '\n';
  return exit_code(s);
}

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { laab_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct PackHandle {
  laab_pack* p = nullptr;
  ~PackHandle() { laab_pack_close(p); }
};

struct ModelHandle {
  laab_model* p = nullptr;
  ~ModelHandle() { laab_model_free(p); }
};

std::optional<std::string> read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  return static_cast<bool>(out);
}

int io_failure(const std::string& what, const std::string& path) {
  std::cerr << "laab: cannot " << what << ' ' << path << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate logic-constrained hallucination detectors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(laab_version()));
  int rc = 0;

  // derive
  auto* derive = app.add_subcommand("derive", "Derive detector features from a raw pack");
  std::string raw_dir, out_dir, feature = "hidden", estimator = "mean";
  double top_p = 0.85;
  bool top_p_judgment = false;
  int kval_r = 7, kval_j = 7;
  std::uint64_t seed = 0;
  derive->add_option("--raw", raw_dir, "Raw pack directory")->required();
  derive->add_option("--out", out_dir, "Output pack directory")->required();
  derive->add_option("--feature", feature, "Feature kind")
      ->check(CLI::IsMember({"hidden", "logits", "attn"}));
  derive->add_option("--top-p", top_p, "Cumulative KL share kept by head selection")
      ->check(CLI::Range(0.0, 1.0));
  derive->add_flag("--top-p-judgment", top_p_judgment, "Apply head selection to A_j as well");
  derive->add_option("--kl-estimator", estimator, "Head score estimator")
      ->check(CLI::IsMember({"mean", "per_sample"}));
  derive->add_option("--kval-r", kval_r, "Candidate layer position (0-7) for H_r")
      ->check(CLI::Range(0, 7));
  derive->add_option("--kval-j", kval_j, "Candidate layer position (0-7) for H_j")
      ->check(CLI::Range(0, 7));
  derive->add_option("--seed", seed, "Split seed when records carry no split");
  derive->callback([&] {
    const nlohmann::json opt = {{"feature", feature},         {"top_p", top_p},
                                {"top_p_judgment", top_p_judgment},
                                {"kl_estimator", estimator},  {"kval_r", kval_r},
                                {"kval_j", kval_j},           {"seed", seed}};
    OwnedString summary;
    rc = finish(laab_derive(raw_dir.c_str(), out_dir.c_str(), opt.dump().c_str(), &summary.p));
    if (rc == 0) std::cout << summary.str() << '\n';
  });

  // train
  auto* train = app.add_subcommand("train", "Train D_r and D_j on a pack");
  std::string pack_dir, config_file, ckpt_out, train_feature;
  bool no_logic = false;
  train->add_option("--pack", pack_dir, "Derived (or raw) pack directory")->required();
  train->add_option("--feature", train_feature, "Feature kind")
      ->check(CLI::IsMember({"hidden", "logits", "attn"}));
  train->add_option("--config", config_file, "Training config JSON");
  train->add_option("--out", ckpt_out, "Checkpoint directory")->required();
  train->add_flag("--no-logic", no_logic, "Plain probes: cross-entropy only (alpha = 0)");
  train->callback([&] {
    std::optional<std::string> cfg;
    if (!config_file.empty()) {
      cfg = read_text(config_file);
      if (!cfg) {
        rc = io_failure("read", config_file);
        return;
      }
    }
    OwnedString summary;
    rc = finish(laab_train(pack_dir.c_str(), train_feature.empty() ? nullptr : train_feature.c_str(),
                           cfg ? cfg->c_str() : nullptr, ckpt_out.c_str(), no_logic ? 0 : 1,
                           &summary.p));
    if (rc == 0) std::cout << nlohmann::json::parse(summary.str()).dump(2) << '\n';
  });

  // predict
  auto* predict = app.add_subcommand("predict", "Label every record of a derived pack");
  std::string ckpt_dir, mode = "r", predict_out;
  predict->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
  predict->add_option("--pack", pack_dir, "Derived pack directory")->required();
  predict->add_option("--mode", mode, "r: D_r only, dj: D_j through the verdict, fused: both")
      ->check(CLI::IsMember({"r", "dj", "fused"}));
  predict->add_option("--out", predict_out, "Write JSON Lines here instead of stdout");
  predict->callback([&] {
    ModelHandle model;
    PackHandle pack;
    OwnedString lines;
    laab_status s = laab_model_load(ckpt_dir.c_str(), &model.p);
    if (s == LAAB_OK) s = laab_pack_open(pack_dir.c_str(), &pack.p);
    if (s == LAAB_OK) s = laab_predict(model.p, pack.p, mode.c_str(), &lines.p);
    rc = finish(s);
    if (rc != 0) return;
    if (predict_out.empty()) {
      std::cout << lines.str();
    } else if (!write_text(predict_out, lines.str())) {
      rc = io_failure("write", predict_out);
    }
  });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score all inference modes on a pack split");
  std::string baseline_dir, split = "test", report_out;
  evaluate->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
  evaluate->add_option("--pack", pack_dir, "Derived pack directory")->required();
  evaluate->add_option("--baseline", baseline_dir,
                       "Plain-probe checkpoint; adds the correctness transition table");
  evaluate->add_option("--split", split, "Records to score")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  evaluate->add_option("--report", report_out, "Write the JSON report here instead of stdout");
  evaluate->callback([&] {
    ModelHandle model, baseline;
    PackHandle pack;
    OwnedString json_text, table;
    laab_status s = laab_model_load(ckpt_dir.c_str(), &model.p);
    if (s == LAAB_OK && !baseline_dir.empty()) s = laab_model_load(baseline_dir.c_str(), &baseline.p);
    if (s == LAAB_OK) s = laab_pack_open(pack_dir.c_str(), &pack.p);
    if (s == LAAB_OK) {
      s = laab_evaluate(model.p, pack.p, baseline.p, split == "all" ? nullptr : split.c_str(),
                        &json_text.p, &table.p);
    }
    rc = finish(s);
    if (rc != 0) return;
    std::cout << table.str();
    if (report_out.empty()) {
      std::cout << '\n' << json_text.str() << '\n';
    } else if (!write_text(report_out, json_text.str() + "\n")) {
      rc = io_failure("write", report_out);
    }
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dual-view pack");
  std::string synth_config;
  synth->add_option("--config", synth_config, "Synth config JSON")->required();
  synth->add_option("--out", out_dir, "Output pack directory")->required();
  synth->callback([&] {
    const auto text = read_text(synth_config);
    if (!text) {
      rc = io_failure("read", synth_config);
      return;
    }
    rc = finish(laab_synth(text->c_str(), out_dir.c_str()));
  });

  // validate-pack
  auto* validate = app.add_subcommand("validate-pack", "Check a pack's structure and values");
  std::string validate_dir;
  validate->add_option("dir", validate_dir, "Pack directory")->required();
  validate->callback([&] {
    OwnedString issues;
    const laab_status s = laab_validate_pack(validate_dir.c_str(), &issues.p);
    if (issues.p) {
      for (const auto& i : nlohmann::json::parse(issues.str())) {
        const std::string id = i.at("record_id");
        std::cerr << (id.empty() ? std::string("pack") : "record " + id) << ": "
                  << i.at("message").get<std::string>() << '\n';
      }
    }
    if (s == LAAB_OK) {
      std::cout << "ok\n";
      rc = 0;
    } else {
      rc = issues.p ? exit_code(s) : finish(s);
    }
  });

  // select-layer
  auto* select = app.add_subcommand("select-layer",
                                    "Pick K_val by training a probe per candidate layer");
  std::string select_config;
  select->add_option("--raw", raw_dir, "Raw pack directory")->required();
  select->add_option("--config", select_config, "Training config JSON");
  select->callback([&] {
    std::optional<std::string> cfg;
    if (!select_config.empty()) {
      cfg = read_text(select_config);
      if (!cfg) {
        rc = io_failure("read", select_config);
        return;
      }
    }
    OwnedString out;
    rc = finish(laab_select_layer(raw_dir.c_str(), cfg ? cfg->c_str() : nullptr, &out.p));
    if (rc == 0) std::cout << nlohmann::json::parse(out.str()).dump(2) << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return rc;
}

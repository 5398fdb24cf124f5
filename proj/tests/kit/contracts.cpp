#include "contracts.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "kit/replay.hpp"
#include "kit/scenarios.hpp"
#include "laab/synth.hpp"
#include "laab/training.hpp"

namespace kit {

using namespace laab;

namespace {

bool same_params(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bit_identical(a[i], b[i])) return false;
  return true;
}

double min_recorded(const TrainReport& rep, Role role) {
  double m = INFINITY;
  for (const auto& e : rep.epochs) {
    if (e.stage != 1) continue;
    const bool active = role == Role::response ? e.active_r : e.active_j;
    if (active) m = std::min(m, role == Role::response ? e.val_ce_r : e.val_ce_j);
  }
  return m;
}

}  // namespace

ContractReport check_training_contracts(std::size_t samples, std::uint64_t seed,
                                        bool full_reproducibility_run) {
  const auto t0 = std::chrono::steady_clock::now();
  ContractReport out;
  std::ostringstream detail;

  PlantedFamily fam = acceptance_family(seed);
  fam.n_samples = samples;
  const FeaturePack pack = synth_generate(fam.build());
  const Partition part = partition_pack(pack, 0);
  const auto train = SampleSet::from_pack(pack, part.train);
  const auto val = SampleSet::from_pack(pack, part.val);

  TrainPlan plan;
  plan.seed = seed;
  plan.patience = 5;
  plan.max_epochs = 120;
  const double lr = 1e-3;
  LogicLossConfig cfg;

  DetectorPair pair = build_pair(train, kScenarioDims, kScenarioDims, plan.seed, lr, plan.weight_decay);
  TrainReport report;
  std::map<std::size_t, std::pair<std::vector<Tensor>, std::vector<Tensor>>> epoch_start;
  std::size_t last_epoch = 0;
  out.alpha_replayed = true;
  auto observer = [&](const BatchObservation& obs) {
    if (obs.stage == 1 && obs.epoch != last_epoch) {
      last_epoch = obs.epoch;
      epoch_start[obs.epoch] = {pair.r.detector.params().snapshot(),
                                pair.j.detector.params().snapshot()};
    }
    const double want = replay_alpha(obs, train, pair.r.detector, pair.j.detector, cfg);
    double err = std::abs(obs.alpha - want) / std::max(1.0, std::abs(want));
    if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
    out.max_alpha_err = std::max(out.max_alpha_err, err);
    ++out.alpha_checks;
    if (!(err <= kAlphaReplayTolerance)) out.alpha_replayed = false;
  };
  stage1_train(pair, train, val, plan, lr, cfg, report, observer);

  // Reversion.
  const double re_r = validation_ce(pair.r.detector, val, Role::response, plan.batch_size);
  const double re_j = validation_ce(pair.j.detector, val, Role::judgment, plan.batch_size);
  out.reversion_exact = re_r == report.best_val_ce_r && re_j == report.best_val_ce_j &&
                        report.best_val_ce_r == min_recorded(report, Role::response) &&
                        report.best_val_ce_j == min_recorded(report, Role::judgment);
  detail << "stop r/j " << report.stop_epoch_r << "/" << report.stop_epoch_j << ", best CE "
         << report.best_val_ce_r << "/" << report.best_val_ce_j;

  // Freezing: from the epoch after the first stop, that detector's
  // parameters must stay identical to its best snapshot.
  const bool r_first = report.stop_epoch_r < report.stop_epoch_j;
  const std::size_t first_stop = std::min(report.stop_epoch_r, report.stop_epoch_j);
  out.freeze_exercised = report.stop_epoch_r != report.stop_epoch_j;
  out.frozen_unchanged = true;
  if (out.freeze_exercised) {
    const auto& frozen = r_first ? pair.r : pair.j;
    const auto final_params = frozen.detector.params().snapshot();
    if (!same_params(final_params, frozen.best.params)) out.frozen_unchanged = false;
    std::size_t compared = 0;
    for (const auto& [epoch, snap] : epoch_start) {
      if (epoch <= first_stop) continue;
      ++compared;
      if (!same_params(r_first ? snap.first : snap.second, final_params)) out.frozen_unchanged = false;
    }
    if (compared == 0) out.freeze_exercised = false;
  }

  // Stage 2 weights replay too.
  stage2_finetune(pair, train, val, plan, cfg, report, observer);

  if (full_reproducibility_run) {
    TrainPlan full;
    full.seed = seed;
    auto a = train_laab(train, val, full, cfg, kScenarioDims, kScenarioDims);
    auto b = train_laab(train, val, full, cfg, kScenarioDims, kScenarioDims);
    out.reproducible = a.report.to_json().dump() == b.report.to_json().dump() &&
                       same_params(a.pair.r.detector.params().snapshot(),
                                   b.pair.r.detector.params().snapshot()) &&
                       same_params(a.pair.j.detector.params().snapshot(),
                                   b.pair.j.detector.params().snapshot());
    detail << ", full run lr " << a.report.chosen_lr;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.detail = detail.str();
  return out;
}

}  // namespace kit

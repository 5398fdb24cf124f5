#include "laab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "laab/error.hpp"

namespace laab {
using nlohmann::json;

namespace {
constexpr double kProbFloor = 1e-12;
}

// ---- sample sets ------------------------------------------------------------

std::vector<std::size_t> SampleSet::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

FeatureBatch SampleSet::batch_r(std::span<const std::size_t> idx) const {
  std::vector<const Tensor*> rows;
  rows.reserve(idx.size());
  for (auto i : idx) rows.push_back(&f_r.at(i));
  return kind == FeatureKind::logits ? FeatureBatch::tokens(rows) : FeatureBatch::dense(rows);
}

FeatureBatch SampleSet::batch_j(std::span<const std::size_t> idx) const {
  std::vector<const Tensor*> rows;
  rows.reserve(idx.size());
  for (auto i : idx) rows.push_back(&f_j.at(i));
  return FeatureBatch::dense(rows);
}

SampleSet SampleSet::from_pack(const FeaturePack& pack, std::span<const std::size_t> indices) {
  if (pack.manifest.schema != Schema::derived || !pack.manifest.feature_kind) {
    throw ValidationError("training needs a derived-schema pack");
  }
  SampleSet s;
  s.kind = *pack.manifest.feature_kind;
  for (auto i : indices) {
    const auto& r = pack.records.at(i);
    s.ids.push_back(r.id);
    s.f_r.push_back(r.tensor("f_r"));
    s.f_j.push_back(r.tensor("f_j"));
    s.l_r.push_back(r.l_r);
    s.l_j.push_back(r.l_j);
    s.o_j.push_back(r.o_j);
    s.n_tokens.push_back(r.n_tokens_r);
  }
  return s;
}

// ---- losses -----------------------------------------------------------------

std::size_t aligned_judgment_column(Verdict o_j) { return o_j == Verdict::yes ? 0 : 1; }

ad::Var logic_terms(const ad::Var& s_r, const ad::Var& s_j, std::span<const Verdict> o_j,
                    double delta) {
  if (s_r.shape() != s_j.shape() || s_r.value().rank() != 2 || s_r.shape()[1] != 2) {
    throw ShapeError("logic loss expects two [B,2] distributions");
  }
  if (o_j.size() != s_r.shape()[0]) throw ShapeError("logic loss: verdict count mismatch");
  std::vector<std::size_t> cols(o_j.size());
  std::transform(o_j.begin(), o_j.end(), cols.begin(), aligned_judgment_column);
  return ad::huber_elementwise(ad::column(s_r, 0), ad::pick_per_row(s_j, cols), delta);
}

ad::Var logic_loss(const ad::Var& s_r, const ad::Var& s_j, std::span<const Verdict> o_j,
                   double delta) {
  return ad::mean(logic_terms(s_r, s_j, o_j, delta));
}

ad::Var huber(const ad::Var& x, const ad::Var& y, double delta) {
  return ad::mean(ad::huber_elementwise(x, y, delta));
}

ConfidenceWeights confidence_weights(const Tensor& s_r, const Tensor& s_j,
                                     std::span<const int> l_r, std::span<const int> l_j) {
  const std::size_t n = l_r.size();
  if (l_j.size() != n || s_r.dim(0) != n || s_j.dim(0) != n) {
    throw ShapeError("confidence_weights: size mismatch");
  }
  ConfidenceWeights w;
  w.w_r.resize(n);
  w.w_j.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    require_binary_label(l_r[i], "l_r");
    require_binary_label(l_j[i], "l_j");
    const double conf_r = std::max<double>(s_r.at(i, static_cast<std::size_t>(l_r[i])), kProbFloor);
    const double conf_j = std::max<double>(s_j.at(i, static_cast<std::size_t>(l_j[i])), kProbFloor);
    w.w_r[i] = std::log1p(conf_j / conf_r);
    w.w_j[i] = std::log1p(conf_r / conf_j);
  }
  return w;
}

double l2_norm(std::span<const ad::Var> vars, bool of_grad) {
  double s = 0.0;
  for (const auto& v : vars) {
    for (float x : (of_grad ? v.grad() : v.value()).data()) s += static_cast<double>(x) * x;
  }
  return std::sqrt(s);
}

double alpha_from_norms(double ce_norm, double logic_norm, const LogicLossConfig& cfg) {
  if (!std::isfinite(ce_norm) || !std::isfinite(logic_norm)) {
    throw NumericError("adaptive alpha: non-finite gradient norm");
  }
  const double a = ce_norm / (logic_norm + cfg.eps);
  return std::clamp(a, 0.0, cfg.alpha_clamp);
}

AlphaResult adaptive_alpha(const ad::Var& ce, const ad::Var& logic,
                           std::span<ad::Var> last_layer, const LogicLossConfig& cfg) {
  AlphaResult r;
  ad::zero_grad(last_layer);
  ad::backward(ce);
  r.ce_norm = l2_norm(last_layer);
  ad::zero_grad(last_layer);
  ad::backward(logic);
  r.logic_norm = l2_norm(last_layer);
  r.alpha = alpha_from_norms(r.ce_norm, r.logic_norm, cfg);
  return r;
}

// ---- report -----------------------------------------------------------------

json TrainReport::to_json() const {
  json j;
  json ep = json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"stage", e.stage},
                  {"epoch", e.epoch},
                  {"lr", e.lr},
                  {"loss_ce_r", e.loss_ce_r},
                  {"loss_ce_j", e.loss_ce_j},
                  {"loss_logic", e.loss_logic},
                  {"alpha_r", e.alpha_r},
                  {"alpha_j", e.alpha_j},
                  {"val_ce_r", e.val_ce_r},
                  {"val_ce_j", e.val_ce_j},
                  {"active_r", e.active_r},
                  {"active_j", e.active_j}});
  }
  j["epochs"] = std::move(ep);
  json al = json::array();
  for (const auto& a : alphas) {
    al.push_back({a.stage, a.epoch, a.batch, to_string(a.role), a.alpha});
  }
  j["alpha_trace"] = std::move(al);
  j["chosen_lr"] = chosen_lr;
  json lrs = json::array();
  for (const auto& [lr, ce] : lr_search) lrs.push_back({{"lr", lr}, {"best_val_ce_r", ce}});
  j["lr_search"] = std::move(lrs);
  j["stop_epoch_r"] = stop_epoch_r;
  j["stop_epoch_j"] = stop_epoch_j;
  j["best_val_ce_r"] = best_val_ce_r;
  j["best_val_ce_j"] = best_val_ce_j;
  j["stage2_epochs"] = stage2_epochs;
  j["stage2_best_val_ce_r"] = stage2_best_val_ce_r;
  j["evaluation"] = evaluation;
  return j;
}

// ---- training ---------------------------------------------------------------

namespace {

std::size_t input_width(const SampleSet& s, Role role) {
  if (s.size() == 0) throw ValidationError("empty training set");
  if (role == Role::judgment) return s.f_j.front().numel();
  return s.kind == FeatureKind::logits ? s.f_r.front().dim(1) : s.f_r.front().numel();
}

std::string divergence_message(Role role, int stage, std::size_t epoch, std::string_view why) {
  return "detector " + std::string(role == Role::response ? "D_r" : "D_j") +
         " diverged in stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) +
         " (" + std::string(why) + ")";
}

void require_finite_loss(double v, Role role, int stage, std::size_t epoch) {
  if (!std::isfinite(v)) throw NumericError(divergence_message(role, stage, epoch, "non-finite loss"));
}

// Attributes numeric failures from deeper layers (forward passes, optimizer)
// to a detector and epoch.
template <class Fn>
decltype(auto) attribute(Role role, int stage, std::size_t epoch, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    if (std::string_view(e.what()).starts_with("detector ")) throw;
    throw NumericError(divergence_message(role, stage, epoch, e.what()));
  }
}

std::vector<int> gather(const std::vector<int>& v, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = v[idx[k]];
  return out;
}

std::vector<Verdict> gather(const std::vector<Verdict>& v, std::span<const std::size_t> idx) {
  std::vector<Verdict> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = v[idx[k]];
  return out;
}

struct StepStats {
  double ce = 0.0;
  double logic = 0.0;
  double alpha = 0.0;
};

struct Batch {
  std::span<const std::size_t> idx;
  FeatureBatch f_r, f_j;
  std::vector<int> l_r, l_j;
  std::vector<Verdict> o_j;
};

StepStats stage1_step(DetectorState& self, const DetectorState& peer, Role role, const Batch& b,
                      const LogicLossConfig& cfg, int epoch, std::size_t batch_no,
                      TrainReport& report, const BatchObserver& observer) {
  const bool is_r = role == Role::response;
  auto out = self.detector.forward(is_r ? b.f_r : b.f_j, true);
  auto ce = ad::cross_entropy(out.probs, is_r ? b.l_r : b.l_j);
  StepStats st;
  st.ce = ce.item();
  require_finite_loss(st.ce, role, 1, static_cast<std::size_t>(epoch));
  auto& params = self.detector.params().vars;

  if (!cfg.enabled) {
    ad::zero_grad(params);
    ad::backward(ce);
    self.optimizer.step();
    return st;
  }

  // The peer is a constant target here: only `self` moves in stage 1.
  const Tensor peer_probs = peer.detector.predict_proba(is_r ? b.f_j : b.f_r);
  ad::Var s_r = is_r ? out.probs : ad::constant(peer_probs);
  ad::Var s_j = is_r ? ad::constant(peer_probs) : out.probs;
  auto terms = logic_terms(s_r, s_j, b.o_j, cfg.delta);
  auto logic = ad::mean(terms);
  st.logic = logic.item();
  require_finite_loss(st.logic, role, 1, static_cast<std::size_t>(epoch));
  const auto weights = confidence_weights(s_r.value(), s_j.value(), b.l_r, b.l_j);
  auto weighted = ad::weighted_mean(terms, is_r ? weights.w_r : weights.w_j);

  auto last = self.detector.last_layer();
  ad::zero_grad(params);
  const AlphaResult a = adaptive_alpha(ce, logic, last, cfg);
  st.alpha = a.alpha;
  report.alphas.push_back({1, static_cast<std::size_t>(epoch), batch_no, role, a.alpha});
  if (observer) {
    BatchObservation obs;
    obs.stage = 1;
    obs.epoch = static_cast<std::size_t>(epoch);
    obs.batch = batch_no;
    obs.role = role;
    obs.indices = b.idx;
    obs.probs_r = &s_r.value();
    obs.probs_j = &s_j.value();
    (is_r ? obs.penultimate_r : obs.penultimate_j) = &out.penultimate.value();
    obs.alpha = a.alpha;
    observer(obs);
  }
  ad::zero_grad(params);
  ad::backward(ad::add(ce, ad::scale(weighted, a.alpha)));
  self.optimizer.step();
  return st;
}

template <class Fn>
void for_each_batch(const SampleSet& train, std::size_t batch_size, Rng& rng, Fn&& fn) {
  auto order = train.all();
  rng.shuffle(order);
  std::size_t batch_no = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size, ++batch_no) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    Batch b;
    b.idx = std::span<const std::size_t>(order).subspan(start, len);
    b.f_r = train.batch_r(b.idx);
    b.f_j = train.batch_j(b.idx);
    b.l_r = gather(train.l_r, b.idx);
    b.l_j = gather(train.l_j, b.idx);
    b.o_j = gather(train.o_j, b.idx);
    fn(b, batch_no);
  }
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

DetectorPair build_pair(const SampleSet& train, std::vector<std::size_t> dims_r,
                        std::vector<std::size_t> dims_j, std::uint64_t seed, double lr,
                        double weight_decay) {
  DetectorConfig cr;
  cr.feature_kind = train.kind;
  cr.role = Role::response;
  cr.hidden_dims = dims_r.empty() ? default_hidden_dims(train.kind, Role::response) : dims_r;
  cr.seed = mix(seed, 1);
  DetectorConfig cj = cr;
  cj.role = Role::judgment;
  cj.hidden_dims = dims_j.empty() ? default_hidden_dims(train.kind, Role::judgment) : dims_j;
  cj.seed = mix(seed, 2);
  nn::AdamWConfig opt;
  opt.lr = lr;
  opt.weight_decay = weight_decay;
  return DetectorPair{DetectorState(Detector(cr, input_width(train, Role::response)), opt),
                      DetectorState(Detector(cj, input_width(train, Role::judgment)), opt)};
}

double validation_ce(const Detector& d, const SampleSet& set, Role role, std::size_t batch_size) {
  if (set.size() == 0) throw ValidationError("empty validation set");
  double sum = 0.0;
  const auto idx = set.all();
  const auto& labels = role == Role::response ? set.l_r : set.l_j;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const auto len = std::min(batch_size, idx.size() - start);
    auto part = std::span<const std::size_t>(idx).subspan(start, len);
    const Tensor probs =
        d.predict_proba(role == Role::response ? set.batch_r(part) : set.batch_j(part));
    for (std::size_t k = 0; k < len; ++k) {
      const auto label = static_cast<std::size_t>(labels[part[k]]);
      sum -= std::log(std::max<double>(probs.at(k, label), kProbFloor));
    }
  }
  return sum / static_cast<double>(set.size());
}

void stage1_train(DetectorPair& pair, const SampleSet& train, const SampleSet& val,
                  const TrainPlan& plan, double lr, const LogicLossConfig& cfg,
                  TrainReport& report, const BatchObserver& observer) {
  if (train.size() == 0 || val.size() == 0) throw ValidationError("stage 1 needs train and val data");
  if (plan.patience < 1) throw ValidationError("patience must be at least 1");
  pair.r.optimizer.set_lr(lr);
  pair.j.optimizer.set_lr(lr);
  Rng order_rng(mix(plan.seed, 11));
  std::size_t wait_r = 0, wait_j = 0;
  bool stop_r = pair.r.frozen, stop_j = pair.j.frozen;
  std::size_t epoch = 0;
  while (!(stop_r && stop_j) && epoch < plan.max_epochs) {
    ++epoch;
    EpochRecord rec;
    rec.stage = 1;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.active_r = !stop_r;
    rec.active_j = !stop_j;
    double ce_r = 0, ce_j = 0, logic = 0, a_r = 0, a_j = 0;
    std::size_t n_batches = 0;
    for_each_batch(train, plan.batch_size, order_rng, [&](const Batch& b, std::size_t no) {
      ++n_batches;
      if (!stop_r) {
        auto st = attribute(Role::response, 1, epoch, [&] {
          return stage1_step(pair.r, pair.j, Role::response, b, cfg, static_cast<int>(epoch), no,
                             report, observer);
        });
        ce_r += st.ce;
        logic += st.logic;
        a_r += st.alpha;
      }
      if (!stop_j) {
        auto st = attribute(Role::judgment, 1, epoch, [&] {
          return stage1_step(pair.j, pair.r, Role::judgment, b, cfg, static_cast<int>(epoch), no,
                             report, observer);
        });
        ce_j += st.ce;
        if (stop_r) logic += st.logic;
        a_j += st.alpha;
      }
    });
    const auto nb = static_cast<double>(n_batches);
    rec.loss_ce_r = ce_r / nb;
    rec.loss_ce_j = ce_j / nb;
    rec.loss_logic = logic / nb;
    rec.alpha_r = a_r / nb;
    rec.alpha_j = a_j / nb;

    auto evaluate = [&](DetectorState& s, Role role, bool& stop, std::size_t& wait,
                        std::size_t& stop_epoch) {
      const double v =
          attribute(role, 1, epoch, [&] { return validation_ce(s.detector, val, role, plan.batch_size); });
      require_finite_loss(v, role, 1, epoch);
      if (s.offer(v, epoch)) {
        wait = 0;
      } else if (++wait >= plan.patience) {
        stop = true;
        s.revert_to_best();
        s.frozen = true;
        stop_epoch = epoch;
      }
      return v;
    };
    rec.val_ce_r = stop_r ? pair.r.best.val_loss
                          : evaluate(pair.r, Role::response, stop_r, wait_r, report.stop_epoch_r);
    rec.val_ce_j = stop_j ? pair.j.best.val_loss
                          : evaluate(pair.j, Role::judgment, stop_j, wait_j, report.stop_epoch_j);
    report.epochs.push_back(rec);
  }
  // Epoch budget exhausted: stop whoever is still running at its best state.
  if (!stop_r) {
    pair.r.revert_to_best();
    report.stop_epoch_r = epoch;
  }
  if (!stop_j) {
    pair.j.revert_to_best();
    report.stop_epoch_j = epoch;
  }
  pair.r.frozen = pair.j.frozen = true;
  report.best_val_ce_r = pair.r.best.val_loss;
  report.best_val_ce_j = pair.j.best.val_loss;
}

void stage2_finetune(DetectorPair& pair, const SampleSet& train, const SampleSet& val,
                     const TrainPlan& plan, const LogicLossConfig& cfg, TrainReport& report,
                     const BatchObserver& observer) {
  // Unfreeze with fresh optimizer state at the joint rate.
  nn::AdamWConfig opt = pair.r.optimizer.config();
  opt.lr = plan.joint_lr;
  pair.r.optimizer = nn::AdamW(pair.r.detector.params().vars, opt);
  pair.j.optimizer = nn::AdamW(pair.j.detector.params().vars, opt);
  pair.r.frozen = pair.j.frozen = false;

  auto best_r = pair.r.detector.params().snapshot();
  auto best_j = pair.j.detector.params().snapshot();
  double best = validation_ce(pair.r.detector, val, Role::response, plan.batch_size);
  Rng order_rng(mix(plan.seed, 23));
  std::size_t wait = 0, epoch = 0;
  auto& pr = pair.r.detector.params().vars;
  auto& pj = pair.j.detector.params().vars;
  auto last_r = pair.r.detector.last_layer();
  auto last_j = pair.j.detector.last_layer();

  while (epoch < plan.max_epochs) {
    ++epoch;
    EpochRecord rec;
    rec.stage = 2;
    rec.epoch = epoch;
    rec.lr = plan.joint_lr;
    rec.active_r = rec.active_j = true;
    double ce_r_sum = 0, ce_j_sum = 0, logic_sum = 0, alpha_sum = 0;
    std::size_t n_batches = 0;
    for_each_batch(train, plan.batch_size, order_rng, [&](const Batch& b, std::size_t no) {
      ++n_batches;
      auto out_r = attribute(Role::response, 2, epoch, [&] { return pair.r.detector.forward(b.f_r, true); });
      auto out_j = attribute(Role::judgment, 2, epoch, [&] { return pair.j.detector.forward(b.f_j, true); });
      auto ce_r = ad::cross_entropy(out_r.probs, b.l_r);
      auto ce_j = ad::cross_entropy(out_j.probs, b.l_j);
      require_finite_loss(ce_r.item(), Role::response, 2, epoch);
      require_finite_loss(ce_j.item(), Role::judgment, 2, epoch);
      auto ce_sum = ad::add(ce_r, ce_j);
      ce_r_sum += ce_r.item();
      ce_j_sum += ce_j.item();
      ad::Var total = ce_sum;
      if (cfg.enabled) {
        auto logic = logic_loss(out_r.probs, out_j.probs, b.o_j, cfg.delta);
        require_finite_loss(logic.item(), Role::response, 2, epoch);
        logic_sum += logic.item();
        ad::zero_grad(pr);
        ad::zero_grad(pj);
        ad::backward(ce_sum);
        const double n_ce_r = l2_norm(last_r), n_ce_j = l2_norm(last_j);
        ad::zero_grad(pr);
        ad::zero_grad(pj);
        ad::backward(logic);
        const double n_lg_r = l2_norm(last_r), n_lg_j = l2_norm(last_j);
        const double alpha =
            0.5 * (alpha_from_norms(n_ce_r, n_lg_r, cfg) + alpha_from_norms(n_ce_j, n_lg_j, cfg));
        alpha_sum += alpha;
        report.alphas.push_back({2, epoch, no, Role::response, alpha});
        if (observer) {
          BatchObservation obs;
          obs.stage = 2;
          obs.epoch = epoch;
          obs.batch = no;
          obs.indices = b.idx;
          obs.probs_r = &out_r.probs.value();
          obs.probs_j = &out_j.probs.value();
          obs.penultimate_r = &out_r.penultimate.value();
          obs.penultimate_j = &out_j.penultimate.value();
          obs.alpha = alpha;
          observer(obs);
        }
        total = ad::add(ce_sum, ad::scale(logic, alpha));
      }
      ad::zero_grad(pr);
      ad::zero_grad(pj);
      ad::backward(total);
      attribute(Role::response, 2, epoch, [&] { pair.r.optimizer.step(); });
      attribute(Role::judgment, 2, epoch, [&] { pair.j.optimizer.step(); });
    });
    const auto nb = static_cast<double>(n_batches);
    rec.loss_ce_r = ce_r_sum / nb;
    rec.loss_ce_j = ce_j_sum / nb;
    rec.loss_logic = logic_sum / nb;
    rec.alpha_r = alpha_sum / nb;
    rec.val_ce_r = attribute(Role::response, 2, epoch, [&] {
      return validation_ce(pair.r.detector, val, Role::response, plan.batch_size);
    });
    rec.val_ce_j = attribute(Role::judgment, 2, epoch, [&] {
      return validation_ce(pair.j.detector, val, Role::judgment, plan.batch_size);
    });
    require_finite_loss(rec.val_ce_r, Role::response, 2, epoch);
    report.epochs.push_back(rec);
    if (rec.val_ce_r < best) {
      best = rec.val_ce_r;
      best_r = pair.r.detector.params().snapshot();
      best_j = pair.j.detector.params().snapshot();
      wait = 0;
    } else if (++wait >= plan.patience) {
      break;
    }
  }
  pair.r.detector.params().restore(best_r);
  pair.j.detector.params().restore(best_j);
  report.stage2_epochs = epoch;
  report.stage2_best_val_ce_r = best;
}

TrainOutcome train_laab(const SampleSet& train, const SampleSet& val, const TrainPlan& plan,
                        const LogicLossConfig& cfg, std::vector<std::size_t> dims_r,
                        std::vector<std::size_t> dims_j) {
  if (plan.lr_grid.empty()) throw ValidationError("learning-rate grid is empty");
  for (double lr : plan.lr_grid) {
    if (!(lr > 0.0)) throw ValidationError("learning rates must be positive");
  }
  if (plan.joint_lr < 0.0) throw ValidationError("joint_lr must be non-negative");
  if (plan.batch_size == 0) throw ValidationError("batch_size must be positive");

  std::optional<TrainOutcome> best;
  std::vector<std::pair<double, double>> search;
  for (double lr : plan.lr_grid) {
    TrainOutcome cand{build_pair(train, dims_r, dims_j, plan.seed, lr, plan.weight_decay), {}};
    stage1_train(cand.pair, train, val, plan, lr, cfg, cand.report);
    cand.report.chosen_lr = lr;
    search.emplace_back(lr, cand.pair.r.best.val_loss);
    if (!best || cand.pair.r.best.val_loss < best->pair.r.best.val_loss) best = std::move(cand);
  }
  best->report.lr_search = std::move(search);
  stage2_finetune(best->pair, train, val, plan, cfg, best->report);
  return std::move(*best);
}

// ---- inference --------------------------------------------------------------

InferenceMode parse_inference_mode(std::string_view s) {
  if (s == "r") return InferenceMode::response;
  if (s == "dj") return InferenceMode::judgment_only;
  if (s == "fused") return InferenceMode::fused;
  throw ValidationError("unknown inference mode '" + std::string(s) + "' (expected r, dj or fused)");
}

std::vector<Prediction> infer_response(const Detector& d_r, const FeatureBatch& f_r) {
  const Tensor p = d_r.predict_proba(f_r);
  std::vector<Prediction> out(p.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {predict_label(p.at(i, 0), p.at(i, 1)), p.at(i, 0), p.at(i, 1)};
  }
  return out;
}

std::vector<Prediction> infer_judgment_only(const Detector& d_j, const FeatureBatch& f_j,
                                            std::span<const Verdict> o_j) {
  const Tensor p = d_j.predict_proba(f_j);
  if (o_j.size() != p.dim(0)) throw ShapeError("judgment inference: verdict count mismatch");
  std::vector<Prediction> out(p.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int lj_hat = predict_label(p.at(i, 0), p.at(i, 1));
    const bool yes = o_j[i] == Verdict::yes;
    out[i].label = yes ? lj_hat : 1 - lj_hat;
    out[i].s_hallu = yes ? p.at(i, 0) : p.at(i, 1);
    out[i].s_real = yes ? p.at(i, 1) : p.at(i, 0);
  }
  return out;
}

std::vector<Prediction> infer_fused(const Detector& d_r, const Detector& d_j,
                                    const FeatureBatch& f_r, const FeatureBatch& f_j,
                                    std::span<const Verdict> o_j) {
  const Tensor pr = d_r.predict_proba(f_r);
  const Tensor pj = d_j.predict_proba(f_j);
  if (o_j.size() != pr.dim(0) || pj.dim(0) != pr.dim(0)) {
    throw ShapeError("fused inference: batch size mismatch");
  }
  std::vector<Prediction> out(pr.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t hallu_col = aligned_judgment_column(o_j[i]);
    const float h = 0.5f * (pr.at(i, 0) + pj.at(i, hallu_col));
    const float r = 0.5f * (pr.at(i, 1) + pj.at(i, 1 - hallu_col));
    out[i] = {predict_label(h, r), h, r};
  }
  return out;
}

std::vector<Prediction> infer(InferenceMode mode, const Detector& d_r, const Detector& d_j,
                              const SampleSet& set, std::size_t batch_size) {
  std::vector<Prediction> out;
  out.reserve(set.size());
  const auto idx = set.all();
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const auto len = std::min(batch_size, idx.size() - start);
    auto part = std::span<const std::size_t>(idx).subspan(start, len);
    std::vector<Verdict> o_j = gather(set.o_j, part);
    std::vector<Prediction> chunk;
    switch (mode) {
      case InferenceMode::response: chunk = infer_response(d_r, set.batch_r(part)); break;
      case InferenceMode::judgment_only:
        chunk = infer_judgment_only(d_j, set.batch_j(part), o_j);
        break;
      case InferenceMode::fused:
        chunk = infer_fused(d_r, d_j, set.batch_r(part), set.batch_j(part), o_j);
        break;
    }
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

}  // namespace laab

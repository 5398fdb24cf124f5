#include "laab/detector.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "laab/error.hpp"

namespace laab {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Role r) noexcept {
  return r == Role::response ? "response" : "judgment";
}

Role parse_role(std::string_view s) {
  if (s == "response") return Role::response;
  if (s == "judgment") return Role::judgment;
  throw ValidationError("unknown detector role '" + std::string(s) + "'");
}

std::vector<std::size_t> default_hidden_dims(FeatureKind kind, Role role) {
  if (kind == FeatureKind::logits) {
    return role == Role::response ? std::vector<std::size_t>{64, 16}
                                  : std::vector<std::size_t>{128, 64, 16};
  }
  return {256, 128, 64};
}

FeatureBatch FeatureBatch::dense(std::span<const Tensor* const> rows) {
  FeatureBatch b;
  if (rows.empty()) return b;
  const std::size_t d = rows.front()->numel();
  std::vector<float> data;
  data.reserve(rows.size() * d);
  for (const Tensor* r : rows) {
    if (r->numel() != d) {
      throw ShapeError("dense batch: feature width " + std::to_string(r->numel()) +
                       " differs from " + std::to_string(d));
    }
    data.insert(data.end(), r->data().begin(), r->data().end());
  }
  b.values = Tensor({rows.size(), d}, std::move(data));
  return b;
}

FeatureBatch FeatureBatch::tokens(std::span<const Tensor* const> matrices) {
  FeatureBatch b;
  if (matrices.empty()) return b;
  const std::size_t width = matrices.front()->dim(1);
  std::size_t nmax = 0;
  for (const Tensor* m : matrices) {
    if (m->rank() != 2 || m->dim(1) != width) {
      throw ShapeError("token batch: expected [N," + std::to_string(width) + "], got " +
                       shape_str(m->shape()));
    }
    if (m->dim(0) == 0) throw ValidationError("token batch: sample without tokens");
    nmax = std::max(nmax, m->dim(0));
  }
  b.values = Tensor({matrices.size(), nmax, width});
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    auto src = matrices[i]->data();
    std::copy(src.begin(), src.end(), b.values.data().begin() +
                                          static_cast<std::ptrdiff_t>(i * nmax * width));
    b.lengths.push_back(matrices[i]->dim(0));
  }
  return b;
}

Detector::Detector(DetectorConfig config, std::size_t input_dim)
    : config_(std::move(config)),
      input_dim_(input_dim),
      dropout_rng_(config_.seed ^ 0x9e3779b97f4a7c15ULL) {
  if (input_dim == 0) throw ValidationError("detector input dimension must be positive");
  if (config_.hidden_dims.empty()) throw ValidationError("detector needs hidden layers");
  if (config_.dropout < 0.0 || config_.dropout >= 1.0) {
    throw ValidationError("dropout rate must be in [0, 1)");
  }
  Rng init(config_.seed);
  std::size_t mlp_in = input_dim;
  if (config_.uses_aggregator()) {
    aggregator_ = nn::AttentionAggregator(params_, "agg", input_dim, init);
    mlp_in = nn::AttentionAggregator::kModelDim;
  }
  mlp_ = nn::Mlp(params_, "mlp", mlp_in, config_.hidden_dims, init);
}

Detector Detector::clone() const {
  Detector copy(config_, input_dim_);
  copy.params_.restore(params_.snapshot());
  copy.dropout_rng_ = dropout_rng_;
  return copy;
}

DetectorOutput Detector::run(const FeatureBatch& batch, bool train_mode, Rng* rng) const {
  if (batch.size() == 0) throw ShapeError("detector forward on an empty batch");
  ad::Var x;
  if (config_.uses_aggregator()) {
    if (!batch.is_tokens() || batch.values.dim(2) != input_dim_) {
      throw ShapeError("detector expects token matrices of width " +
                       std::to_string(input_dim_) + ", got " + shape_str(batch.values.shape()));
    }
    const std::size_t nmax = batch.values.dim(1);
    std::vector<ad::Var> pooled;
    pooled.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      auto src = batch.values.row(b);
      Tensor tokens({nmax, input_dim_}, std::vector<float>(src.begin(), src.end()));
      std::vector<float> mask(nmax, 0.0f);
      std::fill_n(mask.begin(), batch.lengths[b], 1.0f);
      pooled.push_back(aggregator_.forward(tokens, mask));
    }
    x = ad::stack_rows(pooled);
  } else {
    if (batch.is_tokens() || batch.values.rank() != 2 || batch.values.dim(1) != input_dim_) {
      throw ShapeError("detector expects [batch," + std::to_string(input_dim_) +
                       "] features, got " + shape_str(batch.values.shape()));
    }
    x = ad::constant(batch.values);
  }
  DetectorOutput out;
  out.probs = mlp_.forward(x, train_mode, config_.dropout, rng, &out.penultimate);
  return out;
}

DetectorOutput Detector::forward(const FeatureBatch& batch, bool train_mode) {
  return run(batch, train_mode, &dropout_rng_);
}

Tensor Detector::predict_proba(const FeatureBatch& batch) const {
  return run(batch, false, nullptr).probs.value();
}

std::vector<ad::Var> Detector::last_layer() const {
  const auto& out = mlp_.output_layer();
  return {out.weight, out.bias};
}

int predict_label(float s_hallu, float s_real) {
  (void)s_hallu;
  return s_real > 0.5f ? 1 : 0;
}

std::vector<int> predict_labels(const Tensor& probs) {
  std::vector<int> out(probs.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = predict_label(probs.at(i, 0), probs.at(i, 1));
  return out;
}

DetectorState::DetectorState(Detector d, nn::AdamWConfig opt)
    : detector(std::move(d)), optimizer(detector.params().vars, opt) {
  best.params = detector.params().snapshot();
}

bool DetectorState::offer(double val_loss, std::size_t epoch) {
  if (val_loss < best.val_loss) {
    best.params = detector.params().snapshot();
    best.val_loss = val_loss;
    best.epoch = epoch;
    return true;
  }
  return false;
}

void DetectorState::revert_to_best() { detector.params().restore(best.params); }

void save_checkpoint(const Detector& detector, const json& metadata, const fs::path& file) {
  const auto& cfg = detector.config();
  json header;
  header["format"] = "laab-detector";
  header["version"] = 1;
  header["config"] = {{"feature_kind", to_string(cfg.feature_kind)},
                      {"role", to_string(cfg.role)},
                      {"hidden_dims", cfg.hidden_dims},
                      {"aggregator", cfg.uses_aggregator()},
                      {"dropout", cfg.dropout},
                      {"seed", cfg.seed}};
  header["input_dim"] = detector.input_dim();
  json params = json::array();
  const auto& pl = detector.params();
  for (std::size_t i = 0; i < pl.vars.size(); ++i) {
    params.push_back({{"name", pl.names[i]}, {"shape", pl.vars[i].shape()}});
  }
  header["params"] = std::move(params);
  header["metadata"] = metadata;
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + file.string());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& v : pl.vars) {
    out.write(reinterpret_cast<const char*>(v.value().data().data()),
              static_cast<std::streamsize>(v.value().numel() * sizeof(float)));
  }
  if (!out) throw IoError("short write to checkpoint " + file.string());
}

LoadedDetector load_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + file.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 30)) throw ValidationError("checkpoint header is unreadable");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError("checkpoint header is truncated");
  json header;
  DetectorConfig cfg;
  std::size_t input_dim = 0;
  try {
    header = json::parse(text);
    if (header.at("format") != "laab-detector" || header.at("version") != 1) {
      throw ValidationError("not a version-1 detector checkpoint");
    }
    const auto& c = header.at("config");
    cfg.feature_kind = parse_feature_kind(c.at("feature_kind").get<std::string>());
    cfg.role = parse_role(c.at("role").get<std::string>());
    cfg.hidden_dims = c.at("hidden_dims").get<std::vector<std::size_t>>();
    cfg.dropout = c.at("dropout").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    input_dim = header.at("input_dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint header: ") + e.what());
  }
  Detector det(cfg, input_dim);
  const auto& specs = header.at("params");
  auto& pl = det.params();
  if (specs.size() != pl.vars.size()) throw ValidationError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < pl.vars.size(); ++i) {
    if (specs[i].at("name") != pl.names[i] ||
        specs[i].at("shape").get<Shape>() != pl.vars[i].shape()) {
      throw ValidationError("checkpoint parameter '" + pl.names[i] + "' does not match");
    }
    auto data = pl.vars[i].mutable_value().data();
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw ValidationError("checkpoint blob is truncated at '" + pl.names[i] + "'");
  }
  return {std::move(det), header.value("metadata", json::object())};
}

}  // namespace laab

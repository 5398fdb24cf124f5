#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "laab/detector.hpp"
#include "laab/nn.hpp"
#include "laab/training.hpp"
#include "reference.hpp"

namespace kit {
namespace ad = laab::ad;
using laab::Rng;
using laab::Tensor;
using Vals = std::vector<std::vector<double>>;

double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
}

double check_case(const GradCase& c, Rng& rng) {
  const ad::Var out = c.forward();
  Tensor weights(out.shape());
  for (auto& w : weights.data()) w = static_cast<float>(rng.uniform(-1.0, 1.0));
  std::vector<ad::Var> params = c.params;
  ad::zero_grad(params);
  ad::backward(ad::dot_const(out, weights));

  Vals vals;
  for (const auto& p : c.params) vals.emplace_back(p.value().data().begin(), p.value().data().end());
  auto loss = [&](const Vals& v) {
    const auto y = c.oracle(v);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(weights[i]) * y[i];
    return s;
  };

  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t p = 0; p < vals.size(); ++p)
    for (std::size_t k = 0; k < vals[p].size(); ++k) entries.emplace_back(p, k);
  if (c.max_probes && entries.size() > c.max_probes) {
    rng.shuffle(entries);
    entries.resize(c.max_probes);
  }
  double worst = 0;
  for (auto [p, k] : entries) {
    const double x = vals[p][k];
    vals[p][k] = x + kFdStep;
    const double up = loss(vals);
    vals[p][k] = x - kFdStep;
    const double down = loss(vals);
    vals[p][k] = x;
    const double numeric = (up - down) / (2 * kFdStep);
    worst = std::max(worst, rel_err(c.params[p].grad()[k], numeric));
  }
  return worst;
}

namespace {

// Values bounded away from 0 so ReLU-style kinks sit outside the FD stencil.
Tensor random_tensor(laab::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     double avoid = 0.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    double x;
    do {
      x = rng.uniform(lo, hi);
    } while (std::abs(x) < avoid);
    v = static_cast<float>(x);
  }
  return t;
}

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

Mat as_mat(const std::vector<double>& v, std::size_t r, std::size_t c) {
  Mat m(r, c);
  m.v = v;
  return m;
}

ad::Var param(Tensor t) { return ad::parameter(std::move(t)); }

GradCase binary_case(Rng& rng, bool subtract) {
  const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 5);
  GradCase c;
  c.params = {param(random_tensor({m, n}, rng)), param(random_tensor({m, n}, rng))};
  c.forward = [p = c.params, subtract] {
    return subtract ? ad::sub(p[0], p[1]) : ad::add(p[0], p[1]);
  };
  c.oracle = [subtract](const Vals& v) {
    std::vector<double> y(v[0].size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = subtract ? v[0][i] - v[1][i] : v[0][i] + v[1][i];
    return y;
  };
  return c;
}

Layer layer_from(const std::vector<double>& w, const std::vector<double>& b, std::size_t in,
                 std::size_t out) {
  return {as_mat(w, in, out), b};
}

// Retries `make` until the reference forward keeps every ReLU input at least
// `margin` away from zero.
CaseFactory away_from_kinks(CaseFactory make, double margin) {
  return [make, margin](Rng& rng) {
    for (;;) {
      GradCase c = make(rng);
      Vals vals;
      for (const auto& p : c.params) vals.emplace_back(p.value().data().begin(), p.value().data().end());
      reset_relu_margin();
      c.oracle(vals);
      if (relu_margin() >= margin) return c;
    }
  };
}

}  // namespace

std::vector<std::pair<std::string, CaseFactory>> gradient_ops() {
  std::vector<std::pair<std::string, CaseFactory>> ops;

  ops.emplace_back("matmul", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 5), n = dim(rng, 1, 4);
    GradCase c;
    c.params = {param(random_tensor({m, k}, rng)), param(random_tensor({k, n}, rng))};
    c.forward = [p = c.params] { return ad::matmul(p[0], p[1]); };
    c.oracle = [=](const Vals& v) { return matmul(as_mat(v[0], m, k), as_mat(v[1], k, n)).v; };
    return c;
  });
  ops.emplace_back("matmul_nt", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 5), n = dim(rng, 1, 4);
    GradCase c;
    c.params = {param(random_tensor({m, k}, rng)), param(random_tensor({n, k}, rng))};
    c.forward = [p = c.params] { return ad::matmul_nt(p[0], p[1]); };
    c.oracle = [=](const Vals& v) { return matmul_nt(as_mat(v[0], m, k), as_mat(v[1], n, k)).v; };
    return c;
  });
  ops.emplace_back("add", [](Rng& rng) { return binary_case(rng, false); });
  ops.emplace_back("sub", [](Rng& rng) { return binary_case(rng, true); });
  ops.emplace_back("add_row", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 5);
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng)), param(random_tensor({n}, rng))};
    c.forward = [p = c.params] { return ad::add_row(p[0], p[1]); };
    c.oracle = [=](const Vals& v) { return add_row(as_mat(v[0], m, n), v[1]).v; };
    return c;
  });
  ops.emplace_back("scale", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 5);
    const double s = rng.uniform(-3.0, 3.0);
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng))};
    c.forward = [p = c.params, s] { return ad::scale(p[0], s); };
    c.oracle = [s](const Vals& v) {
      auto y = v[0];
      for (auto& x : y) x *= s;
      return y;
    };
    return c;
  });
  ops.emplace_back("relu", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 5);
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng, -1.0, 1.0, 0.01))};
    c.forward = [p = c.params] { return ad::relu(p[0]); };
    c.oracle = [=](const Vals& v) { return relu(as_mat(v[0], m, n)).v; };
    return c;
  });
  ops.emplace_back("mul_const", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 5);
    Tensor mask = laab::nn::dropout_mask({m, n}, 0.3, rng);
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng))};
    c.forward = [p = c.params, mask] { return ad::mul_const(p[0], mask); };
    c.oracle = [mask](const Vals& v) {
      auto y = v[0];
      for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
      return y;
    };
    return c;
  });
  ops.emplace_back("softmax_rows", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), n = dim(rng, 2, 6);
    std::vector<float> mask;
    if (rng.bernoulli(0.5)) {
      mask.assign(n, 1.0f);
      for (auto& x : mask) x = rng.bernoulli(0.3) ? 0.0f : 1.0f;
      mask[rng.below(n)] = 1.0f;
    }
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng, -2.0, 2.0))};
    c.forward = [p = c.params, mask] { return ad::softmax_rows(p[0], mask); };
    c.oracle = [=](const Vals& v) { return softmax_rows(as_mat(v[0], m, n), mask).v; };
    return c;
  });
  ops.emplace_back("layer_norm_rows", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 3), n = dim(rng, 2, 6);
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng, -2.0, 2.0)), param(random_tensor({n}, rng)),
                param(random_tensor({n}, rng))};
    c.forward = [p = c.params] { return ad::layer_norm_rows(p[0], p[1], p[2]); };
    c.oracle = [=](const Vals& v) { return layer_norm_rows(as_mat(v[0], m, n), v[1], v[2]).v; };
    return c;
  });
  ops.emplace_back("slice_cols", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), n = dim(rng, 2, 6);
    const std::size_t start = dim(rng, 0, n - 1), len = dim(rng, 1, n - start);
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng))};
    c.forward = [p = c.params, start, len] { return ad::slice_cols(p[0], start, len); };
    c.oracle = [=](const Vals& v) { return slice_cols(as_mat(v[0], m, n), start, len).v; };
    return c;
  });
  ops.emplace_back("concat_cols", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), parts = dim(rng, 1, 3);
    std::vector<std::size_t> widths;
    GradCase c;
    for (std::size_t i = 0; i < parts; ++i) {
      widths.push_back(dim(rng, 1, 3));
      c.params.push_back(param(random_tensor({m, widths.back()}, rng)));
    }
    c.forward = [p = c.params] { return ad::concat_cols(p); };
    c.oracle = [=](const Vals& v) {
      std::vector<Mat> ms;
      for (std::size_t i = 0; i < v.size(); ++i) ms.push_back(as_mat(v[i], m, widths[i]));
      return concat_cols(ms).v;
    };
    return c;
  });
  ops.emplace_back("stack_rows", [](Rng& rng) {
    const std::size_t k = dim(rng, 1, 4), n = dim(rng, 1, 5);
    GradCase c;
    for (std::size_t i = 0; i < k; ++i) c.params.push_back(param(random_tensor({1, n}, rng)));
    c.forward = [p = c.params] { return ad::stack_rows(p); };
    c.oracle = [](const Vals& v) {
      std::vector<double> y;
      for (const auto& r : v) y.insert(y.end(), r.begin(), r.end());
      return y;
    };
    return c;
  });
  ops.emplace_back("masked_mean_rows", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 5), n = dim(rng, 1, 4);
    std::vector<float> mask(m);
    for (auto& x : mask) x = rng.bernoulli(0.7) ? 1.0f : 0.0f;
    mask[rng.below(m)] = 1.0f;
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng))};
    c.forward = [p = c.params, mask] { return ad::masked_mean_rows(p[0], mask); };
    c.oracle = [=](const Vals& v) { return masked_mean_rows(as_mat(v[0], m, n), mask).v; };
    return c;
  });
  ops.emplace_back("column", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 4), j = dim(rng, 0, n - 1);
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng))};
    c.forward = [p = c.params, j] { return ad::column(p[0], j); };
    c.oracle = [=](const Vals& v) {
      std::vector<double> y(m);
      for (std::size_t i = 0; i < m; ++i) y[i] = v[0][i * n + j];
      return y;
    };
    return c;
  });
  ops.emplace_back("pick_per_row", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 5), n = dim(rng, 1, 4);
    std::vector<std::size_t> idx(m);
    for (auto& i : idx) i = rng.below(n);
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng))};
    c.forward = [p = c.params, idx] { return ad::pick_per_row(p[0], idx); };
    c.oracle = [=](const Vals& v) {
      std::vector<double> y(m);
      for (std::size_t i = 0; i < m; ++i) y[i] = v[0][i * n + idx[i]];
      return y;
    };
    return c;
  });
  ops.emplace_back("huber", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 6);
    const double delta = rng.uniform(0.2, 1.0);
    Tensor x({m}), y({m});
    for (std::size_t i = 0; i < m; ++i) {
      double a, b;
      do {  // keep |a-b| away from the branch point and from 0
        a = rng.uniform(-1.5, 1.5);
        b = rng.uniform(-1.5, 1.5);
      } while (std::abs(std::abs(a - b) - delta) < 0.01 || std::abs(a - b) < 0.01);
      x[i] = static_cast<float>(a);
      y[i] = static_cast<float>(b);
    }
    GradCase c;
    c.params = {param(x), param(y)};
    c.forward = [p = c.params, delta] { return ad::huber_elementwise(p[0], p[1], delta); };
    c.oracle = [delta](const Vals& v) {
      std::vector<double> out(v[0].size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = huber(v[0][i], v[1][i], delta);
      return out;
    };
    return c;
  });
  ops.emplace_back("mean", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 4);
    GradCase c;
    c.params = {param(random_tensor({m, n}, rng))};
    c.forward = [p = c.params] { return ad::mean(p[0]); };
    c.oracle = [](const Vals& v) {
      double s = 0;
      for (double x : v[0]) s += x;
      return std::vector<double>{s / static_cast<double>(v[0].size())};
    };
    return c;
  });
  ops.emplace_back("weighted_mean", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 6);
    std::vector<double> w(m);
    for (auto& x : w) x = rng.uniform(0.0, 2.0);
    GradCase c;
    c.params = {param(random_tensor({m}, rng))};
    c.forward = [p = c.params, w] { return ad::weighted_mean(p[0], w); };
    c.oracle = [w](const Vals& v) {
      double s = 0;
      for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * v[0][i];
      return std::vector<double>{s / static_cast<double>(w.size())};
    };
    return c;
  });
  ops.emplace_back("dot_const", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 6);
    Tensor k = random_tensor({m}, rng);
    GradCase c;
    c.params = {param(random_tensor({m}, rng))};
    c.forward = [p = c.params, k] { return ad::dot_const(p[0], k); };
    c.oracle = [k](const Vals& v) {
      double s = 0;
      for (std::size_t i = 0; i < v[0].size(); ++i) s += k[i] * v[0][i];
      return std::vector<double>{s};
    };
    return c;
  });
  ops.emplace_back("cross_entropy", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 5);
    std::vector<int> labels(m);
    for (auto& l : labels) l = rng.bernoulli(0.5) ? 1 : 0;
    GradCase c;
    c.params = {param(random_tensor({m, 2}, rng, 0.05, 1.0))};
    c.forward = [p = c.params, labels] { return ad::cross_entropy(p[0], labels); };
    c.oracle = [=](const Vals& v) {
      return std::vector<double>{cross_entropy(as_mat(v[0], m, 2), labels)};
    };
    return c;
  });
  ops.emplace_back("logic_loss", [](Rng& rng) {
    const std::size_t m = dim(rng, 1, 6);
    std::vector<laab::Verdict> o(m);
    for (auto& x : o) x = rng.bernoulli(0.5) ? laab::Verdict::yes : laab::Verdict::no;
    Tensor sr({m, 2}), sj({m, 2});
    for (std::size_t i = 0; i < m; ++i) {
      double a, b;
      const std::size_t col = o[i] == laab::Verdict::yes ? 0 : 1;
      do {
        a = rng.uniform(0.0, 1.0);
        b = rng.uniform(0.0, 1.0);
      } while (std::abs(std::abs(a - b) - 0.5) < 0.01 || std::abs(a - b) < 0.01);
      sr.at(i, 0) = static_cast<float>(a);
      sr.at(i, 1) = static_cast<float>(1 - a);
      sj.at(i, col) = static_cast<float>(b);
      sj.at(i, 1 - col) = static_cast<float>(1 - b);
    }
    GradCase c;
    c.params = {param(sr), param(sj)};
    c.forward = [p = c.params, o] { return laab::logic_loss(p[0], p[1], o, 0.5); };
    c.oracle = [o](const Vals& v) {
      double s = 0;
      for (std::size_t i = 0; i < o.size(); ++i) {
        const std::size_t col = o[i] == laab::Verdict::yes ? 0 : 1;
        s += huber(v[0][2 * i], v[1][2 * i + col], 0.5);
      }
      return std::vector<double>{s / static_cast<double>(o.size())};
    };
    return c;
  });
  ops.emplace_back("mlp_cross_entropy", away_from_kinks([](Rng& rng) {
    const std::size_t in = dim(rng, 1, 5), batch = dim(rng, 1, 4);
    std::vector<std::size_t> hidden(dim(rng, 1, 3));
    for (auto& h : hidden) h = dim(rng, 1, 5);
    auto params = std::make_shared<laab::nn::ParamList>();
    auto mlp = std::make_shared<laab::nn::Mlp>(*params, "m", in, hidden, rng);
    // Shift biases so pre-activations rarely land inside the FD stencil.
    for (std::size_t i = 1; i < params->vars.size(); i += 2)
      for (auto& b : params->vars[i].mutable_value().data()) b = static_cast<float>(rng.uniform(-0.3, 0.3));
    Tensor x = random_tensor({batch, in}, rng);
    std::vector<int> labels(batch);
    for (auto& l : labels) l = rng.bernoulli(0.5) ? 1 : 0;
    GradCase c;
    c.params = params->vars;
    c.params.push_back(param(x));
    c.forward = [params, mlp, xp = c.params.back(), labels] {
      return ad::cross_entropy(mlp->forward(xp, false, 0.0, nullptr), labels);
    };
    std::vector<std::size_t> dims{in};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(2);
    c.oracle = [=](const Vals& v) {
      std::vector<Layer> layers;
      for (std::size_t l = 0; l + 1 < dims.size(); ++l)
        layers.push_back(layer_from(v[2 * l], v[2 * l + 1], dims[l], dims[l + 1]));
      return std::vector<double>{cross_entropy(mlp_forward(layers, as_mat(v.back(), batch, in)), labels)};
    };
    return c;
  }, 0.02));
  ops.emplace_back("attention_aggregator", away_from_kinks([](Rng& rng) {
    const std::size_t width = dim(rng, 1, 4), n = dim(rng, 1, 4);
    auto params = std::make_shared<laab::nn::ParamList>();
    auto agg = std::make_shared<laab::nn::AttentionAggregator>(*params, "a", width, rng);
    for (auto& v : params->vars)
      if (v.value().rank() == 1)
        for (auto& b : v.mutable_value().data()) b = static_cast<float>(b + rng.uniform(-0.2, 0.2));
    std::vector<float> mask(n + 1, 1.0f);
    mask[rng.below(n + 1)] = 0.0f;  // one padded row, dropped before the layer
    Tensor tokens = random_tensor({n + 1, width}, rng, -2.0, 2.0);
    GradCase c;
    c.params = params->vars;
    c.forward = [params, agg, tokens, mask] { return agg->forward(tokens, mask); };
    c.oracle = [=](const Vals& v) {
      constexpr std::size_t d = laab::nn::AttentionAggregator::kModelDim;
      constexpr std::size_t f = laab::nn::AttentionAggregator::kFeedForwardDim;
      AggregatorParams p;
      p.in = layer_from(v[0], v[1], width, d);
      p.q = layer_from(v[2], v[3], d, d);
      p.k = layer_from(v[4], v[5], d, d);
      p.v = layer_from(v[6], v[7], d, d);
      p.o = layer_from(v[8], v[9], d, d);
      p.ln1_g = v[10];
      p.ln1_b = v[11];
      p.ff1 = layer_from(v[12], v[13], d, f);
      p.ff2 = layer_from(v[14], v[15], f, d);
      p.ln2_g = v[16];
      p.ln2_b = v[17];
      Mat valid(0, width);
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0.0f) continue;
        ++valid.rows;
        for (std::size_t j = 0; j < width; ++j) valid.v.push_back(tokens.at(i, j));
      }
      return aggregator_forward(p, valid, laab::nn::AttentionAggregator::kHeads);
    };
    c.max_probes = 24;
    return c;
  }, 0.01));
  return ops;
}

std::vector<OpReport> run_gradient_suite(std::size_t cases_per_op, std::uint64_t seed) {
  std::vector<OpReport> out;
  Rng rng(seed);
  for (const auto& [name, make] : gradient_ops()) {
    OpReport r{name, 0, 0.0};
    for (std::size_t i = 0; i < cases_per_op; ++i) {
      r.max_rel_err = std::max(r.max_rel_err, check_case(make(rng), rng));
      ++r.cases;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace kit

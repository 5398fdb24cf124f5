#include "laab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "laab/error.hpp"

namespace laab::ad {
namespace {

using NodePtr = std::shared_ptr<Node>;

Var make(Tensor value, std::vector<NodePtr> inputs,
         std::function<void(Node&)> adjoint) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  node->requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                    [](const NodePtr& n) { return n->requires_grad; });
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->adjoint = std::move(adjoint);
  }
  return Var(std::move(node));
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(v.shape()));
  }
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

// c[m,n] (+)= a[m,k]·b[k,n]
void gemm_nn(const float* a, const float* b, float* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    float* ci = c + i * n;
    const float* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = ai[p];
      if (av == 0.0f) continue;
      const float* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,n] (+)= a[m,k]·b[n,k]ᵀ
void gemm_nt(const float* a, const float* b, float* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const float* bj = b + j * k;
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

// c[k,n] (+)= a[m,k]ᵀ·b[m,n]
void gemm_tn(const float* a, const float* b, float* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* ai = a + i * k;
    const float* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = ai[p];
      if (av == 0.0f) continue;
      float* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

void accumulate(Node& target, std::span<const float> delta) {
  auto g = target.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace

float Var::item() const {
  if (value().numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return value()[0];
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->grad = Tensor(value.shape());
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

void zero_grad(std::span<Var> params) {
  for (auto& p : params) {
    if (p.grad().shape() != p.shape()) {
      p.mutable_grad() = Tensor(p.shape());
    } else {
      p.mutable_grad().fill(0.0f);
    }
  }
}

std::vector<const Node*> topological_order(const Var& root) {
  std::vector<const Node*> order;
  if (!root.defined() || !root.requires_grad()) return order;
  std::unordered_set<const Node*> seen;
  // Iterative post-order DFS: (node, next input index).
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<none>")));
  }
  if (!loss.requires_grad()) return;
  auto order = topological_order(loss);
  for (const Node* cn : order) {
    auto* n = const_cast<Node*>(cn);
    if (!n->is_leaf) {
      n->grad = Tensor(n->value.shape());
    } else if (n->grad.shape() != n->value.shape()) {
      n->grad = Tensor(n->value.shape());
    }
  }
  auto* root = loss.node().get();
  root->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = const_cast<Node*>(*it);
    if (n->adjoint) n->adjoint(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  return make(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    const float* g = self.grad.data().data();
    if (A.requires_grad) {
      gemm_nt(g, B.value.data().data(), A.grad.data().data(), m, n, k);
    }
    if (B.requires_grad) {
      gemm_tn(A.value.data().data(), g, B.grad.data().data(), m, k, n);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  Tensor out({m, n});
  gemm_nt(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  return make(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    const float* g = self.grad.data().data();
    // dA = G·B, dB = Gᵀ·A
    if (A.requires_grad) gemm_nn(g, B.value.data().data(), A.grad.data().data(), m, n, k);
    if (B.requires_grad) gemm_tn(g, A.value.data().data(), B.grad.data().data(), m, n, k);
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) accumulate(*in, self.grad.data());
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) accumulate(A, self.grad.data());
    if (B.requires_grad) {
      auto g = self.grad.data();
      auto bg = B.grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) bg[i] -= g[i];
    }
  });
}

Var add_row(const Var& a, const Var& bias) {
  require_rank(a, 2, "add_row");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (bias.value().numel() != n) {
    throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " for " +
                     shape_str(a.shape()));
  }
  Tensor out = a.value();
  auto bv = bias.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < n; ++j) r[j] += bv[j];
  }
  return make(std::move(out), {a.node(), bias.node()}, [m, n](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) accumulate(A, self.grad.data());
    if (B.requires_grad) {
      auto bg = B.grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        auto g = self.grad.row(i);
        for (std::size_t j = 0; j < n; ++j) bg[j] += g[j];
      }
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  const auto sf = static_cast<float>(s);
  for (auto& v : out.data()) v *= sf;
  return make(std::move(out), {a.node()}, [sf](Node& self) {
    auto g = self.grad.data();
    auto ag = self.inputs[0]->grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) ag[i] += sf * g[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return make(std::move(out), {a.node()}, [](Node& self) {
    auto g = self.grad.data();
    auto x = self.inputs[0]->value.data();
    auto ag = self.inputs[0]->grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0f) ag[i] += g[i];
    }
  });
}

Var mul_const(const Var& a, const Tensor& mask) {
  if (mask.numel() != a.value().numel()) {
    throw ShapeError("mul_const: mask " + shape_str(mask.shape()) + " for " +
                     shape_str(a.shape()));
  }
  Tensor out = a.value();
  auto o = out.data();
  auto mk = mask.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mk[i];
  return make(std::move(out), {a.node()}, [mask](Node& self) {
    auto g = self.grad.data();
    auto mk = mask.data();
    auto ag = self.inputs[0]->grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) ag[i] += mk[i] * g[i];
  });
}

Var softmax_rows(const Var& a, std::span<const float> key_mask) {
  require_rank(a, 2, "softmax_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (!key_mask.empty() && key_mask.size() != n) {
    throw ShapeError("softmax_rows: mask length " + std::to_string(key_mask.size()) +
                     " for " + std::to_string(n) + " columns");
  }
  auto valid = [&](std::size_t j) { return key_mask.empty() || key_mask[j] != 0.0f; };
  if (!key_mask.empty() &&
      std::none_of(key_mask.begin(), key_mask.end(), [](float v) { return v != 0.0f; })) {
    throw ValidationError("softmax_rows: every column is masked");
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto x = a.value().row(i);
    auto y = out.row(i);
    float mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (valid(j)) mx = std::max(mx, x[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = valid(j) ? std::exp(static_cast<double>(x[j] - mx)) : 0.0;
      y[j] = static_cast<float>(e);
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) y[j] = static_cast<float>(y[j] / sum);
  }
  return make(std::move(out), {a.node()}, [m, n](Node& self) {
    Node& A = *self.inputs[0];
    for (std::size_t i = 0; i < m; ++i) {
      auto y = self.value.row(i);
      auto g = self.grad.row(i);
      auto ag = A.grad.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[j]) * y[j];
      for (std::size_t j = 0; j < n; ++j) {
        ag[j] += static_cast<float>(y[j] * (g[j] - dot));
      }
    }
  });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
  require_rank(a, 2, "layer_norm_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (gamma.value().numel() != n || beta.value().numel() != n) {
    throw ShapeError("layer_norm_rows: affine params do not match width " +
                     std::to_string(n));
  }
  Tensor out({m, n});
  Tensor xhat({m, n});
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto x = a.value().row(i);
    double mu = 0.0;
    for (float v : x) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (float v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    auto xh = xhat.row(i);
    auto y = out.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = static_cast<float>((x[j] - mu) * inv_std[i]);
      y[j] = xh[j] * gamma.value()[j] + beta.value()[j];
    }
  }
  return make(std::move(out), {a.node(), gamma.node(), beta.node()},
              [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                Node& A = *self.inputs[0];
                Node& G = *self.inputs[1];
                Node& B = *self.inputs[2];
                for (std::size_t i = 0; i < m; ++i) {
                  auto g = self.grad.row(i);
                  auto xh = xhat.row(i);
                  if (G.requires_grad || B.requires_grad) {
                    for (std::size_t j = 0; j < n; ++j) {
                      if (G.requires_grad) G.grad[j] += g[j] * xh[j];
                      if (B.requires_grad) B.grad[j] += g[j];
                    }
                  }
                  if (A.requires_grad) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = static_cast<double>(g[j]) * G.value[j];
                      sum_d += d;
                      sum_dx += d * xh[j];
                    }
                    const double inv_n = 1.0 / static_cast<double>(n);
                    auto ag = A.grad.row(i);
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = static_cast<double>(g[j]) * G.value[j];
                      ag[j] += static_cast<float>(
                          inv_std[i] * (d - sum_d * inv_n - xh[j] * sum_dx * inv_n));
                    }
                  }
                }
              });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t len) {
  require_rank(a, 2, "slice_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (start + len > n) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " + std::to_string(n));
  }
  Tensor out({m, len});
  for (std::size_t i = 0; i < m; ++i) {
    auto x = a.value().row(i);
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(start), len, out.row(i).begin());
  }
  return make(std::move(out), {a.node()}, [m, start, len](Node& self) {
    Node& A = *self.inputs[0];
    for (std::size_t i = 0; i < m; ++i) {
      auto g = self.grad.row(i);
      auto ag = A.grad.row(i);
      for (std::size_t j = 0; j < len; ++j) ag[start + j] += g[j];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].shape().at(0);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.shape()[0] != m) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
    inputs.push_back(p.node());
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i) {
      auto x = parts[k].value().row(i);
      std::copy(x.begin(), x.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(off));
    }
    off += widths[k];
  }
  return make(std::move(out), std::move(inputs), [m, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& in = *self.inputs[k];
      if (in.requires_grad) {
        for (std::size_t i = 0; i < m; ++i) {
          auto g = self.grad.row(i);
          auto ig = in.grad.row(i);
          for (std::size_t j = 0; j < widths[k]; ++j) ig[j] += g[off + j];
        }
      }
      off += widths[k];
    }
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const std::size_t n = rows[0].value().numel();
  std::vector<NodePtr> inputs;
  Tensor out({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].value().numel() != n) throw ShapeError("stack_rows: width mismatch");
    auto x = rows[i].value().data();
    std::copy(x.begin(), x.end(), out.row(i).begin());
    inputs.push_back(rows[i].node());
  }
  return make(std::move(out), std::move(inputs), [](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (self.inputs[i]->requires_grad) accumulate(*self.inputs[i], self.grad.row(i));
    }
  });
}

Var masked_mean_rows(const Var& a, std::span<const float> row_mask) {
  require_rank(a, 2, "masked_mean_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (row_mask.size() != m) throw ShapeError("masked_mean_rows: mask length mismatch");
  std::size_t count = 0;
  for (float v : row_mask) count += v != 0.0f;
  if (count == 0) throw ValidationError("masked_mean_rows: every row is masked");
  std::vector<double> acc(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (row_mask[i] == 0.0f) continue;
    auto x = a.value().row(i);
    for (std::size_t j = 0; j < n; ++j) acc[j] += x[j];
  }
  Tensor out({1, n});
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<float>(acc[j] * inv);
  std::vector<float> mask(row_mask.begin(), row_mask.end());
  return make(std::move(out), {a.node()}, [m, n, inv, mask](Node& self) {
    Node& A = *self.inputs[0];
    for (std::size_t i = 0; i < m; ++i) {
      if (mask[i] == 0.0f) continue;
      auto ag = A.grad.row(i);
      for (std::size_t j = 0; j < n; ++j) ag[j] += static_cast<float>(self.grad[j] * inv);
    }
  });
}

Var column(const Var& a, std::size_t j) {
  require_rank(a, 2, "column");
  const std::size_t m = a.shape()[0];
  std::vector<std::size_t> idx(m, j);
  return pick_per_row(a, idx);
}

Var pick_per_row(const Var& a, std::span<const std::size_t> idx) {
  require_rank(a, 2, "pick_per_row");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (idx.size() != m) throw ShapeError("pick_per_row: index count mismatch");
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] >= n) throw ShapeError("pick_per_row: column out of range");
    out[i] = a.value().at(i, idx[i]);
  }
  std::vector<std::size_t> cols(idx.begin(), idx.end());
  return make(std::move(out), {a.node()}, [n, cols](Node& self) {
    Node& A = *self.inputs[0];
    for (std::size_t i = 0; i < cols.size(); ++i) A.grad[i * n + cols[i]] += self.grad[i];
  });
}

Var huber_elementwise(const Var& x, const Var& y, double delta) {
  require_same(x, y, "huber");
  if (!(delta > 0.0)) throw ValidationError("huber: delta must be positive");
  Tensor out(x.shape());
  auto xv = x.value().data();
  auto yv = y.value().data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double r = static_cast<double>(xv[i]) - yv[i];
    const double ar = std::abs(r);
    out[i] = static_cast<float>(ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta));
  }
  return make(std::move(out), {x.node(), y.node()}, [delta](Node& self) {
    Node& X = *self.inputs[0];
    Node& Y = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      const double r = static_cast<double>(X.value[i]) - Y.value[i];
      const double d = std::abs(r) <= delta ? r : (r > 0 ? delta : -delta);
      const auto gd = static_cast<float>(d * self.grad[i]);
      if (X.requires_grad) X.grad[i] += gd;
      if (Y.requires_grad) Y.grad[i] -= gd;
    }
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (float v : a.value().data()) s += v;
  const double inv = 1.0 / static_cast<double>(n);
  return make(Tensor::scalar(static_cast<float>(s * inv)), {a.node()}, [inv](Node& self) {
    const auto g = static_cast<float>(self.grad[0] * inv);
    for (auto& v : self.inputs[0]->grad.data()) v += g;
  });
}

Var weighted_mean(const Var& a, std::span<const double> weights) {
  const std::size_t n = a.value().numel();
  if (n == 0 || weights.size() != n) throw ShapeError("weighted_mean: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += weights[i] * a.value()[i];
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> w(weights.begin(), weights.end());
  return make(Tensor::scalar(static_cast<float>(s * inv)), {a.node()}, [inv, w](Node& self) {
    auto ag = self.inputs[0]->grad.data();
    for (std::size_t i = 0; i < ag.size(); ++i) {
      ag[i] += static_cast<float>(self.grad[0] * w[i] * inv);
    }
  });
}

Var dot_const(const Var& a, const Tensor& c) {
  if (c.numel() != a.value().numel()) throw ShapeError("dot_const: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < c.numel(); ++i) s += static_cast<double>(c[i]) * a.value()[i];
  return make(Tensor::scalar(static_cast<float>(s)), {a.node()}, [c](Node& self) {
    auto ag = self.inputs[0]->grad.data();
    for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += self.grad[0] * c[i];
  });
}

Var cross_entropy(const Var& probs, std::span<const int> labels, double floor) {
  require_rank(probs, 2, "cross_entropy");
  const std::size_t m = probs.shape()[0], n = probs.shape()[1];
  if (labels.size() != m) throw ShapeError("cross_entropy: label count mismatch");
  if (m == 0) throw ShapeError("cross_entropy: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) +
                            " outside {0,1}");
    }
    const double p = std::max<double>(probs.value().at(i, labels[i]), floor);
    s -= std::log(p);
  }
  const double inv = 1.0 / static_cast<double>(m);
  std::vector<int> lab(labels.begin(), labels.end());
  return make(Tensor::scalar(static_cast<float>(s * inv)), {probs.node()},
              [inv, n, floor, lab](Node& self) {
                Node& P = *self.inputs[0];
                for (std::size_t i = 0; i < lab.size(); ++i) {
                  const double p = P.value[i * n + lab[i]];
                  if (p < floor) continue;  // clamped: flat
                  P.grad[i * n + lab[i]] += static_cast<float>(-self.grad[0] * inv / p);
                }
              });
}

Var stop_gradient(const Var& a) { return constant(a.value()); }

}  // namespace laab::ad

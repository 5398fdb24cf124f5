#pragma once

// Tape-free reverse-mode differentiation over Tensor values.
//
// Every op returns a Var that owns its value and holds shared references to
// its inputs, so the graph lives exactly as long as the outputs built from it.
// backward() orders the reachable nodes topologically and runs the recorded
// adjoints in reverse. Parameter leaves accumulate gradients across calls
// until zero_grad(); interior nodes are reset on every call, so one graph can
// be differentiated with respect to several losses.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "laab/tensor.hpp"

namespace laab::ad {

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> adjoint;
  bool requires_grad = false;
  bool is_leaf = true;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  float item() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaves.
Var parameter(Tensor value);
Var constant(Tensor value);

// Resets parameter gradients to zero.
void zero_grad(std::span<Var> params);

// Differentiates a scalar (single element) loss. Throws ShapeError otherwise.
void backward(const Var& loss);

// Number of nodes reachable from `root`, in the order backward would visit
// them reversed. Exposed for tests of the traversal contract.
std::vector<const Node*> topological_order(const Var& root);

// ---- ops ------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);     // [m,k]·[k,n]
Var matmul_nt(const Var& a, const Var& b);  // [m,k]·[n,k]ᵀ
Var add(const Var& a, const Var& b);        // same shape
Var sub(const Var& a, const Var& b);        // same shape
Var add_row(const Var& a, const Var& bias); // [m,n] + [n]
Var scale(const Var& a, double s);
Var relu(const Var& a);
// Elementwise product with a constant mask (dropout).
Var mul_const(const Var& a, const Tensor& mask);

// Row softmax of [m,n]. `key_mask` (length n, entries 0/1) removes columns;
// masked columns get exactly zero probability. Empty mask means all valid.
Var softmax_rows(const Var& a, std::span<const float> key_mask = {});

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta,
                    double eps = 1e-5);

Var slice_cols(const Var& a, std::size_t start, std::size_t len);
Var concat_cols(std::span<const Var> parts);
// Stacks k tensors of n elements each into [k,n].
Var stack_rows(std::span<const Var> rows);

// Mean over rows of [m,n] where row_mask[i] != 0. Result [1,n].
Var masked_mean_rows(const Var& a, std::span<const float> row_mask);

Var column(const Var& a, std::size_t j);                         // [m,n] -> [m]
Var pick_per_row(const Var& a, std::span<const std::size_t> idx); // [m,n] -> [m]

// Elementwise Huber penalty between equal-shaped x and y.
Var huber_elementwise(const Var& x, const Var& y, double delta);

Var mean(const Var& a);
// sum_i w_i a_i / n with constant weights.
Var weighted_mean(const Var& a, std::span<const double> weights);
// sum_i c_i a_i with constant coefficients.
Var dot_const(const Var& a, const Tensor& c);

// Mean of -log(max(p[i][label_i], floor)) over rows of a [m,2] matrix.
Var cross_entropy(const Var& probs, std::span<const int> labels,
                  double floor = 1e-12);

// Detached copy sharing no graph history.
Var stop_gradient(const Var& a);

}  // namespace laab::ad

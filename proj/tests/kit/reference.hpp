#pragma once

// Straight-line double-precision re-implementations used as test oracles.
// Nothing here calls into the engine's math.

#include <cstddef>
#include <span>
#include <vector>

namespace kit {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

Mat matmul(const Mat& a, const Mat& b);
Mat matmul_nt(const Mat& a, const Mat& b);
Mat add(const Mat& a, const Mat& b);
Mat add_row(const Mat& a, std::span<const double> bias);
Mat relu(const Mat& a);
// Smallest |pre-activation| seen by relu() since the last reset; lets
// gradient checks reject cases whose kinks sit inside the FD stencil.
void reset_relu_margin();
double relu_margin();
Mat softmax_rows(const Mat& a, std::span<const float> key_mask = {});
Mat layer_norm_rows(const Mat& a, std::span<const double> gamma, std::span<const double> beta,
                    double eps = 1e-5);
Mat slice_cols(const Mat& a, std::size_t start, std::size_t len);
Mat concat_cols(const std::vector<Mat>& parts);
Mat masked_mean_rows(const Mat& a, std::span<const float> mask);

double huber(double x, double y, double delta);
double cross_entropy(const Mat& probs, std::span<const int> labels, double floor = 1e-12);

// One linear layer as (weight [in,out], bias [out]).
struct Layer {
  Mat w;
  std::vector<double> b;
};

// Eval-mode MLP: ReLU hidden layers, softmax output.
Mat mlp_forward(const std::vector<Layer>& layers, const Mat& x);

// Post-norm encoder layer + mean pooling, parameters in declaration order:
// in_proj, q, k, v, o, ln1 (gamma, beta), ff1, ff2, ln2 (gamma, beta).
struct AggregatorParams {
  Layer in, q, k, v, o;
  std::vector<double> ln1_g, ln1_b;
  Layer ff1, ff2;
  std::vector<double> ln2_g, ln2_b;
};
std::vector<double> aggregator_forward(const AggregatorParams& p, const Mat& tokens,
                                       std::size_t heads);

}  // namespace kit

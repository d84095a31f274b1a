#pragma once

#include <span>

#include "tdsim/tensor.hpp"

namespace tdsim {

// out[n,o] = sum_i input[n,i] * weight[i,o] + bias[o]
Var linear(const Var& input, const Var& weight, const Var& bias);

// Stride-1 cross-correlation with zero padding k/2 for an odd k x k kernel.
// input [N,C,H,W], kernel [F,C,k,k], bias [F] -> [N,F,H,W]
Var conv2d(const Var& input, const Var& kernel, const Var& bias);

enum class PoolKind { Max, Avg };

// Non-overlapping 2x2 pooling; H and W must be even.
Var pool2d(const Var& input, PoolKind kind);

// [N,C,H,W] -> [N,C], mean over the spatial cells.
Var global_avg_pool(const Var& input);

Var relu(const Var& input);
Var sigmoid(const Var& input);

// Row-wise softmax over [N,K] with max subtraction.
Var softmax(const Var& logits);

// Mean over rows of -sum_k target * ln(clamp(prob, 1e-12, 1)). target rows
// must be one-hot.
Var cross_entropy(const Var& probs, const Tensor& target_onehot);

// Mean over elements of -[t ln d + (1-t) ln(1-d)], d clamped to
// [1e-12, 1 - 1e-12]. d and target share a shape; target entries are 0 or 1.
Var binary_cross_entropy(const Var& d, const Tensor& target);

inline constexpr double kProbClamp = 1e-12;

// Scalar helpers for single values.
double cross_entropy_value(std::span<const double> probs, std::size_t target);
double binary_cross_entropy_value(double d, double target);

Var reshape(const Var& input, Shape shape);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
// a + c for a constant tensor c; c carries no gradient.
Var add_constant(const Var& a, const Tensor& c);
Var sum(const Var& a);
Var mean(const Var& a);

// Row mixture out[n,:] = w[n] * a[n,:] + (1 - w[n]) * b[n,:], w of shape [N] or [N,1].
Var mix_rows(const Var& w, const Var& a, const Var& b);

Tensor one_hot(std::span<const int> labels, std::size_t num_classes);

// Index of the largest element in each row of a [N,K] tensor.
std::vector<int> argmax_rows(const Tensor& t);

}  // namespace tdsim

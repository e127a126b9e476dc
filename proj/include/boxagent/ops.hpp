#pragma once

// Differentiable primitives over Tensor.
//
// Binary elementwise ops broadcast by trailing alignment: shapes are matched
// from the last axis backwards and each pair of extents must be equal or one
// of them 1. Matmul contracts the last axis of the left operand with the first
// axis of a 2-D right operand (leading axes of the left operand are batch),
// or runs a batched product when both operands are rank 3 with equal batch.

#include <span>
#include <vector>

#include "boxagent/tensor.hpp"

namespace boxagent::numerics {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);
// a [M,K] times b [N,K] transposed -> [M,N].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Over the last axis, max-subtracted.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
// Gradient passes where lo <= x <= hi.
Tensor clamp(const Tensor& a, double lo, double hi);

constexpr double kLayerNormEps = 1e-5;
// Normalizes over the last axis; no affine part.
Tensor layer_norm(const Tensor& a, double eps = kLayerNormEps);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& a, Shape shape);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_last(const Tensor& a);

// Same values, no recorded history.
Tensor detach(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace boxagent::numerics

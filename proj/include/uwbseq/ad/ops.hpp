#pragma once

#include <vector>

#include "uwbseq/ad/var.hpp"

namespace uwbseq::ad {

// Binary elementwise ops broadcast with right-aligned dimensions: each pair
// of trailing dimensions must be equal or one of them 1; missing leading
// dimensions count as 1. Shape errors name both operands.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

Var add_scalar(const Var& a, Real c);
Var mul_scalar(const Var& a, Real c);

Var neg(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var reciprocal(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var softplus(const Var& a);
Var silu(const Var& a);

// a: [..., K], b: [K, N] -> [..., N]. Rank-1 a is treated as [1, K] and keeps rank 1.
Var matmul(const Var& a, const Var& b);
// Swaps the last two dimensions.
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);

Var slice(const Var& a, int axis, std::size_t start, std::size_t length);
Var concat(const std::vector<Var>& parts, int axis);

Var sum(const Var& a);   // all elements -> scalar
Var mean(const Var& a);  // all elements -> scalar
Var sum(const Var& a, int axis, bool keepdim);
Var mean(const Var& a, int axis, bool keepdim);
// Inclusive prefix sum along an axis.
Var cumsum(const Var& a, int axis);

// x * rsqrt(mean(x^2, last axis) + eps) * weight, composed from primitives.
Var rms_norm(const Var& x, const Var& weight, Real eps = 1e-5);

// Mean of squared differences over all elements.
Var mse_loss(const Var& prediction, const Var& target);

}  // namespace uwbseq::ad

#pragma once

#include <cmath>

#include "uwbseq/ad/var.hpp"

namespace uwbseq::models {

using ad::Real;
using ad::Var;

struct Discretized {
  Real abar;
  Real bbar;
};

// exp(x) given em = expm1(x). 1 + em is exact enough near 0 but rounds to 0
// for very negative x, where exp(x) is used instead.
inline Real decay(Real x, Real em) { return x > Real(-0.5) ? 1 + em : std::exp(x); }

// Exact zero-order hold for one diagonal entry a < 0 with step delta > 0:
// abar = exp(delta a), bbar = (exp(delta a) - 1) / a * b.
inline Discretized discretize(Real delta, Real a, Real b) {
  const Real em = std::expm1(delta * a);
  return {decay(delta * a, em), em / a * b};
}

// Selective scan over the time axis with input-dependent delta, B and C.
// u, delta: [B, S, E]; a: [E, N] (strictly negative); b, c: [B, S, N]; d: [E].
//   h_t = abar_t * h_{t-1} + bbar_t * u_t,  h_0 = 0
//   y_t = sum_n c_t[n] h_t[n] + d * u_t
// Gradients flow to every input.
Var selective_scan(const Var& u, const Var& delta, const Var& a, const Var& b, const Var& c, const Var& d);

// Depthwise causal convolution along time; x: [B, S, E], weight: [E, W], bias: [E].
// y[b,t,e] = bias[e] + sum_k weight[e,k] * x[b, t-(W-1)+k, e], zero-padded on the left.
Var causal_conv1d(const Var& x, const Var& weight, const Var& bias);

// When enabled, selective_scan verifies 0 < abar < 1 for every entry and throws otherwise.
void set_stability_checks(bool enabled);
bool stability_checks();

}  // namespace uwbseq::models

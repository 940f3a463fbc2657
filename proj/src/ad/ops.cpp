#include "uwbseq/ad/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uwbseq::ad {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(rank));
  return a;
}

// Index bookkeeping for right-aligned broadcasting.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> sa, sb;  // strides of a / b in output index space (0 = broadcast)
  bool same = false;
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t r = std::max(a.size(), b.size());
  bc.out.assign(r, 1);
  bc.sa.assign(r, 0);
  bc.sb.assign(r, 0);
  std::size_t stride_a = 1, stride_b = 1;
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t i = r - 1 - k;
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " do not broadcast");
    bc.out[i] = std::max(da, db);
    bc.sa[i] = (da == 1) ? 0 : stride_a;
    bc.sb[i] = (db == 1) ? 0 : stride_b;
    stride_a *= da;
    stride_b *= db;
  }
  return bc;
}

// Calls f(o, ia, ib) for every output element in row-major order.
template <typename F>
void broadcast_loop(const Broadcast& bc, F&& f) {
  const std::size_t n = shape_numel(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = bc.out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = bc.out[r - 1];
  const std::size_t sa = bc.sa[r - 1], sb = bc.sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, ia + j * sa, ib + j * sb);
    // Advance the odometer over the outer dimensions.
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += bc.sa[d];
      ib += bc.sb[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.sa[d] * idx[d];
      ib -= bc.sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

template <typename Fwd, typename DA, typename DB>
Var binary(const Var& a, const Var& b, const char* name, Fwd fwd, DA da, DB db) {
  auto bc = broadcast_shapes(a.shape(), b.shape(), name);
  Tensor out(bc.out);
  const Real* pa = a.value().data();
  const Real* pb = b.value().data();
  Real* po = out.data();
  broadcast_loop(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { po[o] = fwd(pa[ia], pb[ib]); });
  return make_result(std::move(out), {a, b}, [bc, da, db](Node& self) {
    const Real* g = self.grad.data();
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const Real* xa = na.value.data();
    const Real* xb = nb.value.data();
    if (na.requires_grad) {
      Real* ga = na.grad_buffer().data();
      broadcast_loop(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { ga[ia] += g[o] * da(xa[ia], xb[ib]); });
    }
    if (nb.requires_grad) {
      Real* gb = nb.grad_buffer().data();
      broadcast_loop(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { gb[ib] += g[o] * db(xa[ia], xb[ib]); });
    }
  });
}

// d(x, y) is the local derivative given input x and output y.
template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const Real* x = a.value().data();
  Real* y = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
  return make_result(std::move(out), {a}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    const Real* g = self.grad.data();
    const Real* x = p.value.data();
    const Real* y = self.value.data();
    Real* gx = p.grad_buffer().data();
    const std::size_t n = self.value.numel();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * deriv(x[i], y[i]);
  });
}

Real stable_sigmoid(Real x) {
  if (x >= 0) {
    const Real z = std::exp(-x);
    return 1 / (1 + z);
  }
  const Real z = std::exp(x);
  return z / (1 + z);
}

Real stable_softplus(Real x) { return x > 20 ? x : std::log1p(std::exp(x)); }

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(1); });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(-1); });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; }, [](Real x, Real) { return x; });
}

Var add_scalar(const Var& a, Real c) {
  return unary(a, [c](Real x) { return x + c; }, [](Real, Real) { return Real(1); });
}

Var mul_scalar(const Var& a, Real c) {
  return unary(a, [c](Real x) { return x * c; }, [c](Real, Real) { return c; });
}

Var neg(const Var& a) {
  return unary(a, [](Real x) { return -x; }, [](Real, Real) { return Real(-1); });
}

Var exp(const Var& a) {
  return unary(a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](Real x) { return std::log(x); }, [](Real x, Real) { return 1 / x; });
}

Var sqrt(const Var& a) {
  return unary(a, [](Real x) { return std::sqrt(x); }, [](Real, Real y) { return Real(0.5) / y; });
}

Var reciprocal(const Var& a) {
  return unary(a, [](Real x) { return 1 / x; }, [](Real, Real y) { return -y * y; });
}

Var square(const Var& a) {
  return unary(a, [](Real x) { return x * x; }, [](Real x, Real) { return 2 * x; });
}

Var sigmoid(const Var& a) {
  return unary(a, stable_sigmoid, [](Real, Real y) { return y * (1 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1 - y * y; });
}

Var softplus(const Var& a) {
  return unary(a, stable_softplus, [](Real x, Real) { return stable_sigmoid(x); });
}

Var silu(const Var& a) {
  return unary(
      a, [](Real x) { return x * stable_sigmoid(x); },
      [](Real x, Real) {
        const Real s = stable_sigmoid(x);
        return s * (1 + x * (1 - s));
      });
}

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sb.size() != 2 || sa.back() != sb[0])
    throw std::invalid_argument("matmul: shapes " + shape_str(sa) + " and " + shape_str(sb) + " are incompatible");
  const std::size_t k = sb[0], n = sb[1];
  const std::size_t m = a.value().numel() / k;
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  Tensor out(out_shape);
  MapMat(out.data(), m, n).noalias() = CMapMat(a.value().data(), m, k) * CMapMat(b.value().data(), k, n);
  return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    CMapMat g(self.grad.data(), m, n);
    if (na.requires_grad)
      MapMat(na.grad_buffer().data(), m, k).noalias() += g * CMapMat(nb.value.data(), k, n).transpose();
    if (nb.requires_grad)
      MapMat(nb.grad_buffer().data(), k, n).noalias() += CMapMat(na.value.data(), m, k).transpose() * g;
  });
}

Var transpose(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw std::invalid_argument("transpose: needs rank >= 2, got " + shape_str(s));
  const std::size_t r = s[s.size() - 2], c = s.back();
  const std::size_t batch = a.value().numel() / (r * c);
  Shape os = s;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor out(os);
  const Real* x = a.value().data();
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[bi * r * c + j * r + i] = x[bi * r * c + i * c + j];
  return make_result(std::move(out), {a}, [batch, r, c](Node& self) {
    Node& p = *self.parents[0];
    Real* gx = p.grad_buffer().data();
    const Real* g = self.grad.data();
    for (std::size_t bi = 0; bi < batch; ++bi)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[bi * r * c + i * c + j] += g[bi * r * c + j * r + i];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    Real* gx = p.grad_buffer().data();
    const Real* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) gx[i] += g[i];
  });
}

Var slice(const Var& a, int axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  const auto ax = static_cast<std::size_t>(norm_axis(axis, s.size(), "slice"));
  if (start + length > s[ax])
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                ") exceeds axis " + std::to_string(ax) + " of " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t full = s[ax];
  Shape os = s;
  os[ax] = length;
  Tensor out(os);
  const Real* x = a.value().data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x + (o * full + start) * inner, length * inner, out.data() + o * length * inner);
  return make_result(std::move(out), {a}, [outer, inner, full, start, length](Node& self) {
    Node& p = *self.parents[0];
    Real* gx = p.grad_buffer().data();
    const Real* g = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      Real* dst = gx + (o * full + start) * inner;
      const Real* src = g + o * length * inner;
      for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const auto ax = static_cast<std::size_t>(norm_axis(axis, s0.size(), "concat"));
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == s0[i];
    if (!ok) throw std::invalid_argument("concat: shape " + shape_str(s) + " does not match " + shape_str(s0));
    widths.push_back(s[ax]);
    total += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s0[i];
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape os = s0;
  os[ax] = total;
  Tensor out(os);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Real* x = parts[pi].value().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x + o * widths[pi] * inner, widths[pi] * inner, out.data() + (o * total + offset) * inner);
    offset += widths[pi];
  }
  return make_result(std::move(out), parts, [outer, inner, total, widths](Node& self) {
    const Real* g = self.grad.data();
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      Node& p = *self.parents[pi];
      if (p.requires_grad) {
        Real* gx = p.grad_buffer().data();
        for (std::size_t o = 0; o < outer; ++o) {
          const Real* src = g + (o * total + offset) * inner;
          Real* dst = gx + o * widths[pi] * inner;
          for (std::size_t i = 0; i < widths[pi] * inner; ++i) dst[i] += src[i];
        }
      }
      offset += widths[pi];
    }
  });
}

Var sum(const Var& a) {
  Real s = 0;
  for (Real v : a.value().values()) s += v;
  return make_result(Tensor::scalar(s), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    const Real g = self.grad[0];
    for (auto& v : p.grad_buffer().values()) v += g;
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<Real>(a.value().numel());
  return mul_scalar(sum(a), 1 / n);
}

Var sum(const Var& a, int axis, bool keepdim) {
  const Shape& s = a.shape();
  const auto ax = static_cast<std::size_t>(norm_axis(axis, s.size(), "sum"));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  Shape os = s;
  if (keepdim) {
    os[ax] = 1;
  } else {
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  Tensor out(os);
  const Real* x = a.value().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * n + k) * inner + i];
  return make_result(std::move(out), {a}, [outer, inner, n](Node& self) {
    Node& p = *self.parents[0];
    Real* gx = p.grad_buffer().data();
    const Real* g = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * n + k) * inner + i] += g[o * inner + i];
  });
}

Var mean(const Var& a, int axis, bool keepdim) {
  const auto n = static_cast<Real>(a.value().dim(axis));
  return mul_scalar(sum(a, axis, keepdim), 1 / n);
}

Var cumsum(const Var& a, int axis) {
  const Shape& s = a.shape();
  const auto ax = static_cast<std::size_t>(norm_axis(axis, s.size(), "cumsum"));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  Tensor out(s);
  const Real* x = a.value().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      Real acc = 0;
      for (std::size_t k = 0; k < n; ++k) {
        acc += x[(o * n + k) * inner + i];
        out[(o * n + k) * inner + i] = acc;
      }
    }
  return make_result(std::move(out), {a}, [outer, inner, n](Node& self) {
    Node& p = *self.parents[0];
    Real* gx = p.grad_buffer().data();
    const Real* g = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        Real acc = 0;
        for (std::size_t k = n; k-- > 0;) {
          acc += g[(o * n + k) * inner + i];
          gx[(o * n + k) * inner + i] += acc;
        }
      }
  });
}

Var rms_norm(const Var& x, const Var& weight, Real eps) {
  const Var ms = mean(square(x), -1, true);
  const Var inv = reciprocal(sqrt(add_scalar(ms, eps)));
  return mul(mul(x, inv), weight);
}

Var mse_loss(const Var& prediction, const Var& target) {
  if (prediction.shape() != target.shape())
    throw std::invalid_argument("mse_loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                                shape_str(target.shape()));
  return mean(square(sub(prediction, target)));
}

}  // namespace uwbseq::ad

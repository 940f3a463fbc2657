#include "uwbseq/models/ssm.hpp"

#include <memory>
#include <stdexcept>
#include <string>

namespace uwbseq::models {

using ad::Node;
using ad::Shape;
using ad::shape_str;
using ad::Tensor;

namespace {
#ifdef NDEBUG
bool g_stability_checks = false;
#else
bool g_stability_checks = true;
#endif
}  // namespace

void set_stability_checks(bool enabled) { g_stability_checks = enabled; }
bool stability_checks() { return g_stability_checks; }

Var selective_scan(const Var& u, const Var& delta, const Var& a, const Var& b, const Var& c, const Var& d) {
  const Shape& su = u.shape();
  if (su.size() != 3) throw std::invalid_argument("selective_scan: u must be [B,S,E], got " + shape_str(su));
  const std::size_t nb = su[0], ns = su[1], ne = su[2];
  if (a.shape().size() != 2 || a.shape()[0] != ne)
    throw std::invalid_argument("selective_scan: a " + shape_str(a.shape()) + " does not match u " + shape_str(su));
  const std::size_t nn = a.shape()[1];
  const Shape sbc{nb, ns, nn};
  if (delta.shape() != su) throw std::invalid_argument("selective_scan: delta " + shape_str(delta.shape()) + " vs u " + shape_str(su));
  if (b.shape() != sbc || c.shape() != sbc)
    throw std::invalid_argument("selective_scan: b " + shape_str(b.shape()) + " / c " + shape_str(c.shape()) +
                                " expected " + shape_str(sbc));
  if (d.shape() != Shape{ne}) throw std::invalid_argument("selective_scan: d " + shape_str(d.shape()) + " expected [" + std::to_string(ne) + "]");

  const Real* pu = u.value().data();
  const Real* pdt = delta.value().data();
  const Real* pa = a.value().data();
  const Real* pb = b.value().data();
  const Real* pc = c.value().data();
  const Real* pd = d.value().data();

  const bool keep = ad::grad_enabled() && (u.requires_grad() || delta.requires_grad() || a.requires_grad() ||
                                           b.requires_grad() || c.requires_grad() || d.requires_grad());
  // Hidden states and expm1(delta a), [B, S, E, N], kept for the backward pass.
  auto hs = std::make_shared<std::vector<Real>>(keep ? nb * ns * ne * nn : 0);
  auto ab = std::make_shared<std::vector<Real>>(keep ? nb * ns * ne * nn : 0);
  std::vector<Real> h(nn), em(nn), abar(nn);

  Tensor out(su);
  Real* py = out.data();
  for (std::size_t bi = 0; bi < nb; ++bi) {
    for (std::size_t e = 0; e < ne; ++e) {
      std::fill(h.begin(), h.end(), Real(0));
      const Real* arow = pa + e * nn;
      for (std::size_t t = 0; t < ns; ++t) {
        const std::size_t iu = (bi * ns + t) * ne + e;
        const Real dt = pdt[iu];
        const Real ut = pu[iu];
        const Real* bt = pb + (bi * ns + t) * nn;
        const Real* ct = pc + (bi * ns + t) * nn;
        for (std::size_t n = 0; n < nn; ++n) em[n] = std::expm1(dt * arow[n]);
        for (std::size_t n = 0; n < nn; ++n) abar[n] = decay(dt * arow[n], em[n]);
        Real acc = 0;
        for (std::size_t n = 0; n < nn; ++n) {
          h[n] = abar[n] * h[n] + em[n] / arow[n] * bt[n] * ut;
          acc += ct[n] * h[n];
        }
        if (g_stability_checks)
          for (std::size_t n = 0; n < nn; ++n)
            if (!(abar[n] > 0 && abar[n] < 1))
              throw std::runtime_error("selective_scan: discretized decay outside (0,1) at a=" + std::to_string(arow[n]) +
                                       ", delta=" + std::to_string(dt));
        py[iu] = acc + pd[e] * ut;
        if (keep) {
          const std::size_t off = iu * nn;
          std::copy(h.begin(), h.end(), hs->begin() + static_cast<std::ptrdiff_t>(off));
          std::copy(em.begin(), em.end(), ab->begin() + static_cast<std::ptrdiff_t>(off));
        }
      }
    }
  }

  return ad::make_result(std::move(out), {u, delta, a, b, c, d}, [nb, ns, ne, nn, hs, ab](Node& self) {
    Node& nu = *self.parents[0];
    Node& ndt = *self.parents[1];
    Node& na = *self.parents[2];
    Node& nbm = *self.parents[3];
    Node& ncm = *self.parents[4];
    Node& nd = *self.parents[5];
    const Real* g = self.grad.data();
    const Real* pu = nu.value.data();
    const Real* pdt = ndt.value.data();
    const Real* pa = na.value.data();
    const Real* pb = nbm.value.data();
    const Real* pc = ncm.value.data();
    const Real* pd = nd.value.data();

    std::vector<Real> gu(nb * ns * ne, 0), gdt(nb * ns * ne, 0), ga(ne * nn, 0), gb(nb * ns * nn, 0),
        gc(nb * ns * nn, 0), gd(ne, 0);
    std::vector<Real> carry(nn);
    const Real* H = hs->data();
    const Real* AB = ab->data();
    for (std::size_t bi = 0; bi < nb; ++bi) {
      for (std::size_t e = 0; e < ne; ++e) {
        std::fill(carry.begin(), carry.end(), Real(0));
        const Real* arow = pa + e * nn;
        Real* garow = ga.data() + e * nn;
        for (std::size_t t = ns; t-- > 0;) {
          const std::size_t iu = (bi * ns + t) * ne + e;
          const Real gy = g[iu];
          const Real ut = pu[iu];
          const Real dt = pdt[iu];
          const Real* bt = pb + (bi * ns + t) * nn;
          const Real* ct = pc + (bi * ns + t) * nn;
          Real* gbt = gb.data() + (bi * ns + t) * nn;
          Real* gct = gc.data() + (bi * ns + t) * nn;
          const Real* ht = H + iu * nn;
          const Real* hprev = t > 0 ? H + ((bi * ns + t - 1) * ne + e) * nn : nullptr;
          const Real* abt = AB + iu * nn;
          Real gu_acc = gy * pd[e];
          Real gdt_acc = 0;
          gd[e] += gy * ut;
          for (std::size_t n = 0; n < nn; ++n) {
            const Real an = arow[n];
            const Real em = abt[n];
            const Real abar = decay(dt * an, em);
            const Real f = em / an;
            gct[n] += gy * ht[n];
            const Real gh = gy * ct[n] + carry[n];
            const Real g_abar = hprev ? gh * hprev[n] : Real(0);
            const Real g_bbar = gh * ut;
            gu_acc += gh * f * bt[n];
            gbt[n] += g_bbar * f;
            const Real g_f = g_bbar * bt[n];
            // abar = exp(dt a), f = (abar - 1) / a
            gdt_acc += g_abar * an * abar + g_f * abar;
            garow[n] += g_abar * dt * abar + g_f * (dt * abar * an - em) / (an * an);
            carry[n] = gh * abar;
          }
          gu[iu] += gu_acc;
          gdt[iu] += gdt_acc;
        }
      }
    }
    auto accumulate = [](Node& n, const std::vector<Real>& src) {
      if (!n.requires_grad) return;
      Real* dst = n.grad_buffer().data();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    };
    accumulate(nu, gu);
    accumulate(ndt, gdt);
    accumulate(na, ga);
    accumulate(nbm, gb);
    accumulate(ncm, gc);
    accumulate(nd, gd);
  });
}

Var causal_conv1d(const Var& x, const Var& weight, const Var& bias) {
  const Shape& sx = x.shape();
  if (sx.size() != 3) throw std::invalid_argument("causal_conv1d: x must be [B,S,E], got " + shape_str(sx));
  const std::size_t nb = sx[0], ns = sx[1], ne = sx[2];
  if (weight.shape().size() != 2 || weight.shape()[0] != ne)
    throw std::invalid_argument("causal_conv1d: weight " + shape_str(weight.shape()) + " does not match x " + shape_str(sx));
  if (bias.shape() != Shape{ne}) throw std::invalid_argument("causal_conv1d: bias " + shape_str(bias.shape()));
  const std::size_t nw = weight.shape()[1];
  Tensor out(sx);
  const Real* px = x.value().data();
  const Real* pw = weight.value().data();
  const Real* pbias = bias.value().data();
  Real* py = out.data();
  for (std::size_t bi = 0; bi < nb; ++bi)
    for (std::size_t t = 0; t < ns; ++t) {
      Real* yrow = py + (bi * ns + t) * ne;
      for (std::size_t e = 0; e < ne; ++e) yrow[e] = pbias[e];
      for (std::size_t k = 0; k < nw; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(nw - 1);
        if (src < 0) continue;
        const Real* xrow = px + (bi * ns + static_cast<std::size_t>(src)) * ne;
        for (std::size_t e = 0; e < ne; ++e) yrow[e] += pw[e * nw + k] * xrow[e];
      }
    }
  return ad::make_result(std::move(out), {x, weight, bias}, [nb, ns, ne, nw](Node& self) {
    Node& nx = *self.parents[0];
    Node& nwt = *self.parents[1];
    Node& nbias = *self.parents[2];
    const Real* g = self.grad.data();
    const Real* px = nx.value.data();
    const Real* pw = nwt.value.data();
    Real* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
    Real* gw = nwt.requires_grad ? nwt.grad_buffer().data() : nullptr;
    Real* gbias = nbias.requires_grad ? nbias.grad_buffer().data() : nullptr;
    for (std::size_t bi = 0; bi < nb; ++bi)
      for (std::size_t t = 0; t < ns; ++t) {
        const Real* grow = g + (bi * ns + t) * ne;
        if (gbias)
          for (std::size_t e = 0; e < ne; ++e) gbias[e] += grow[e];
        for (std::size_t k = 0; k < nw; ++k) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(nw - 1);
          if (src < 0) continue;
          const std::size_t off = (bi * ns + static_cast<std::size_t>(src)) * ne;
          for (std::size_t e = 0; e < ne; ++e) {
            if (gx) gx[off + e] += pw[e * nw + k] * grow[e];
            if (gw) gw[e * nw + k] += px[off + e] * grow[e];
          }
        }
      }
  });
}

}  // namespace uwbseq::models

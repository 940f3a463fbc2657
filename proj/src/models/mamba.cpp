#include "uwbseq/models/mamba.hpp"

#include <cmath>
#include <stdexcept>

#include "uwbseq/ad/ops.hpp"
#include "uwbseq/models/ssm.hpp"
#include "uwbseq/rng.hpp"

namespace uwbseq::models {

using namespace uwbseq::ad;

void MambaConfig::validate() const {
  if (!input_dim || !d_model || !n_blocks || !d_state || !expand || !label_dim || !window)
    throw std::invalid_argument("MambaConfig: sizes must be positive");
  if (!(dt_min > 0.0) || !(dt_max >= dt_min)) throw std::invalid_argument("MambaConfig: bad dt range");
}

Var mamba_block(const Var& x, const MambaBlockParams& p, const MambaConfig& config) {
  const std::size_t e = config.d_inner();
  const std::size_t r = config.resolved_dt_rank();
  const std::size_t n = config.d_state;

  const Var h = rms_norm(x, p.norm);
  const Var xz = matmul(h, p.in_proj);
  Var u = slice(xz, -1, 0, e);
  const Var gate = slice(xz, -1, e, e);
  if (config.conv_width > 0) u = causal_conv1d(u, p.conv_weight, p.conv_bias);
  u = silu(u);

  const Var dbc = matmul(u, p.x_proj);
  const Var dt_in = slice(dbc, -1, 0, r);
  const Var b = slice(dbc, -1, r, n);
  const Var c = slice(dbc, -1, r + n, n);
  const Var delta = softplus(add(matmul(dt_in, p.dt_weight), p.dt_bias));
  const Var a = neg(exp(p.a_log));

  const Var y = mul(selective_scan(u, delta, a, b, c, p.d_skip), silu(gate));
  return add(x, matmul(y, p.out_proj));
}

MambaModel::MambaModel(const MambaConfig& config, std::uint64_t seed) : SequenceModel(seed), config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t e = config_.d_inner();
  const std::size_t r = config_.resolved_dt_rank();
  const std::size_t n = config_.d_state;
  const std::size_t w = config_.conv_width;
  auto inv_sqrt = [](std::size_t k) { return static_cast<Real>(1.0 / std::sqrt(static_cast<double>(k))); };

  embed_w_ = params_.uniform("embed.weight", {config_.input_dim, d}, inv_sqrt(config_.input_dim));
  embed_b_ = params_.zeros("embed.bias", {d});
  pos_ = params_.normal("embed.pos", {config_.window, d}, 0.02);

  for (std::size_t i = 0; i < config_.n_blocks; ++i) {
    const std::string pre = "block" + std::to_string(i) + ".";
    MambaBlockParams bp;
    bp.norm = params_.constant(pre + "norm", {d}, 1);
    bp.in_proj = params_.uniform(pre + "in_proj", {d, 2 * e}, inv_sqrt(d));
    if (w > 0) {
      bp.conv_weight = params_.uniform(pre + "conv.weight", {e, w}, inv_sqrt(w));
      bp.conv_bias = params_.zeros(pre + "conv.bias", {e});
    }
    bp.x_proj = params_.uniform(pre + "x_proj", {e, r + 2 * n}, inv_sqrt(e));
    bp.dt_weight = params_.uniform(pre + "dt_proj.weight", {r, e}, inv_sqrt(r));

    // Bias set so softplus(bias) is log-uniform in [dt_min, dt_max].
    auto g = named_stream(params_.seed(), pre + "dt_proj.bias");
    Tensor dt_bias({e});
    for (auto& v : dt_bias.values()) {
      const double lo = std::log(config_.dt_min), hi = std::log(config_.dt_max);
      const double dt = std::exp(uniform(g, lo, hi));
      v = static_cast<Real>(dt + std::log(-std::expm1(-dt)));
    }
    bp.dt_bias = params_.from_tensor(pre + "dt_proj.bias", std::move(dt_bias));

    Tensor a_log({e, n});
    for (std::size_t row = 0; row < e; ++row)
      for (std::size_t k = 0; k < n; ++k) a_log[row * n + k] = static_cast<Real>(std::log(static_cast<double>(k + 1)));
    bp.a_log = params_.from_tensor(pre + "A_log", std::move(a_log));
    bp.d_skip = params_.constant(pre + "D", {e}, 1);
    bp.out_proj = params_.uniform(pre + "out_proj", {e, d}, inv_sqrt(e));
    blocks_.push_back(bp);
  }
  final_norm_ = params_.constant("final_norm", {d}, 1);
  head_w_ = params_.uniform("head.weight", {d, config_.label_dim}, inv_sqrt(d));
  head_b_ = params_.zeros("head.bias", {config_.label_dim});
}

Var MambaModel::embed(const Var& x) const {
  if (x.shape().size() != 3 || x.shape()[1] != config_.window || x.shape()[2] != config_.input_dim)
    throw std::invalid_argument("MambaModel: input " + shape_str(x.shape()) + " expected [B," +
                                std::to_string(config_.window) + "," + std::to_string(config_.input_dim) + "]");
  return add(add(matmul(x, embed_w_), embed_b_), pos_);
}

Var MambaModel::forward(const Var& x) {
  Var h = embed(x);
  for (const auto& bp : blocks_) h = mamba_block(h, bp, config_);
  return add(matmul(rms_norm(h, final_norm_), head_w_), head_b_);
}

}  // namespace uwbseq::models

#pragma once

#include <string>
#include <vector>

#include "uwbseq/models/model.hpp"

namespace uwbseq::models {

// Weights of one selective-SSM block.
struct MambaBlockParams {
  Var norm;         // [D]
  Var in_proj;      // [D, 2E]
  Var conv_weight;  // [E, W] (undefined when W = 0)
  Var conv_bias;    // [E]
  Var x_proj;       // [E, R + 2N]
  Var dt_weight;    // [R, E]
  Var dt_bias;      // [E]
  Var a_log;        // [E, N], A = -exp(a_log)
  Var d_skip;       // [E]
  Var out_proj;     // [E, D]
};

// pre-norm -> in_proj split into stream and gate -> causal conv -> silu ->
// selective scan (delta, B, C from the stream) -> * silu(gate) -> out_proj -> residual.
Var mamba_block(const Var& x, const MambaBlockParams& p, const MambaConfig& config);

class MambaModel : public SequenceModel {
public:
  MambaModel(const MambaConfig& config, std::uint64_t seed);

  // embed -> n_blocks mamba_block -> RMS norm -> linear head, per time step.
  Var forward(const Var& x) override;
  // Linear projection plus the learnable positional table; x: [B, S, input_dim].
  Var embed(const Var& x) const;

  std::string kind() const override { return "mamba"; }
  std::size_t input_dim() const override { return config_.input_dim; }
  std::size_t label_dim() const override { return config_.label_dim; }
  const MambaConfig& config() const { return config_; }

  const MambaBlockParams& block(std::size_t i) const { return blocks_.at(i); }
  const Var& embed_weight() const { return embed_w_; }
  const Var& embed_bias() const { return embed_b_; }
  const Var& positional() const { return pos_; }

private:
  MambaConfig config_;
  Var embed_w_, embed_b_, pos_;
  std::vector<MambaBlockParams> blocks_;
  Var final_norm_, head_w_, head_b_;
};

}  // namespace uwbseq::models

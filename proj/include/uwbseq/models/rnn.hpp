#pragma once

#include <vector>

#include "uwbseq/models/model.hpp"

namespace uwbseq::models {

// Gate order: LSTM i, f, g, o; GRU r, z, n.
struct RecurrentWeights {
  Var w_ih;  // [I, G*H]
  Var w_hh;  // [H, G*H]
  Var b_ih;  // [G*H]
  Var b_hh;  // [G*H] (GRU only; the LSTM folds both biases into b_ih)
};

// One direction of one layer over x: [B, S, I] -> [B, S, H]. `reverse` runs t = S-1 .. 0.
Var lstm_layer(const Var& x, const RecurrentWeights& w, std::size_t hidden, bool reverse);
Var gru_layer(const Var& x, const RecurrentWeights& w, std::size_t hidden, bool reverse);

class RnnModel : public SequenceModel {
public:
  RnnModel(const RnnConfig& config, std::uint64_t seed);

  Var forward(const Var& x) override;
  std::string kind() const override;
  std::size_t input_dim() const override { return config_.input_dim; }
  std::size_t label_dim() const override { return config_.label_dim; }
  const RnnConfig& config() const { return config_; }

  // layers[l][dir]
  const std::vector<std::vector<RecurrentWeights>>& layers() const { return layers_; }

private:
  RnnConfig config_;
  std::vector<std::vector<RecurrentWeights>> layers_;
  Var head_w_, head_b_;
};

}  // namespace uwbseq::models

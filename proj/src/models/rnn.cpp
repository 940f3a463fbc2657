#include "uwbseq/models/rnn.hpp"

#include <cmath>
#include <stdexcept>

#include "uwbseq/ad/ops.hpp"

namespace uwbseq::models {

using namespace uwbseq::ad;

std::string cell_name(CellKind kind) {
  switch (kind) {
    case CellKind::GRU: return "gru";
    case CellKind::LSTM: return "lstm";
    case CellKind::BiLSTM: return "bilstm";
  }
  return "?";
}

CellKind parse_cell(const std::string& name) {
  if (name == "gru") return CellKind::GRU;
  if (name == "lstm") return CellKind::LSTM;
  if (name == "bilstm") return CellKind::BiLSTM;
  throw std::invalid_argument("unknown recurrent cell '" + name + "'");
}

void RnnConfig::validate() const {
  if (!hidden_size || !n_layers || !input_dim || !label_dim) throw std::invalid_argument("RnnConfig: sizes must be positive");
}

namespace {

Var step_input(const Var& xw, std::size_t t) {
  const std::size_t b = xw.shape()[0], g = xw.shape()[2];
  return reshape(slice(xw, 1, t, 1), {b, g});
}

Var stack_steps(std::vector<Var>& steps, std::size_t hidden) {
  for (auto& s : steps) s = reshape(s, {s.shape()[0], 1, hidden});
  return concat(steps, 1);
}

}  // namespace

Var lstm_layer(const Var& x, const RecurrentWeights& w, std::size_t hidden, bool reverse) {
  const std::size_t b = x.shape()[0], s = x.shape()[1];
  const Var xw = add(matmul(x, w.w_ih), w.b_ih);
  Var h(Tensor({b, hidden}, 0));
  Var c(Tensor({b, hidden}, 0));
  std::vector<Var> outs(s);
  for (std::size_t k = 0; k < s; ++k) {
    const std::size_t t = reverse ? s - 1 - k : k;
    const Var gates = add(step_input(xw, t), matmul(h, w.w_hh));
    const Var i = sigmoid(slice(gates, 1, 0, hidden));
    const Var f = sigmoid(slice(gates, 1, hidden, hidden));
    const Var g = tanh(slice(gates, 1, 2 * hidden, hidden));
    const Var o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
    outs[t] = h;
  }
  return stack_steps(outs, hidden);
}

Var gru_layer(const Var& x, const RecurrentWeights& w, std::size_t hidden, bool reverse) {
  const std::size_t b = x.shape()[0], s = x.shape()[1];
  const Var xw = add(matmul(x, w.w_ih), w.b_ih);
  Var h(Tensor({b, hidden}, 0));
  std::vector<Var> outs(s);
  for (std::size_t k = 0; k < s; ++k) {
    const std::size_t t = reverse ? s - 1 - k : k;
    const Var xt = step_input(xw, t);
    const Var hw = add(matmul(h, w.w_hh), w.b_hh);
    const Var r = sigmoid(add(slice(xt, 1, 0, hidden), slice(hw, 1, 0, hidden)));
    const Var z = sigmoid(add(slice(xt, 1, hidden, hidden), slice(hw, 1, hidden, hidden)));
    const Var n = tanh(add(slice(xt, 1, 2 * hidden, hidden), mul(r, slice(hw, 1, 2 * hidden, hidden))));
    // (1 - z) * n + z * h
    h = add(n, mul(z, sub(h, n)));
    outs[t] = h;
  }
  return stack_steps(outs, hidden);
}

RnnModel::RnnModel(const RnnConfig& config, std::uint64_t seed) : SequenceModel(seed), config_(config) {
  config_.validate();
  const std::size_t hdim = config_.hidden_size;
  const bool gru = config_.cell == CellKind::GRU;
  const std::size_t gates = gru ? 3 : 4;
  const std::size_t dirs = config_.cell == CellKind::BiLSTM ? 2 : 1;
  const auto bound = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(hdim)));
  std::size_t in = config_.input_dim;
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    std::vector<RecurrentWeights> layer;
    for (std::size_t dir = 0; dir < dirs; ++dir) {
      const std::string pre = "layer" + std::to_string(l) + (dir ? ".reverse." : ".");
      RecurrentWeights w;
      w.w_ih = params_.uniform(pre + "w_ih", {in, gates * hdim}, bound);
      w.w_hh = params_.uniform(pre + "w_hh", {hdim, gates * hdim}, bound);
      w.b_ih = params_.uniform(pre + "b_ih", {gates * hdim}, bound);
      if (gru) w.b_hh = params_.uniform(pre + "b_hh", {gates * hdim}, bound);
      layer.push_back(w);
    }
    layers_.push_back(layer);
    in = dirs * hdim;
  }
  head_w_ = params_.uniform("head.weight", {in, config_.label_dim}, static_cast<Real>(1.0 / std::sqrt(static_cast<double>(in))));
  head_b_ = params_.zeros("head.bias", {config_.label_dim});
}

std::string RnnModel::kind() const { return cell_name(config_.cell); }

Var RnnModel::forward(const Var& x) {
  if (x.shape().size() != 3 || x.shape()[2] != config_.input_dim)
    throw std::invalid_argument(kind() + ": input " + shape_str(x.shape()) + " expected [B,S," +
                                std::to_string(config_.input_dim) + "]");
  Var h = x;
  for (const auto& layer : layers_) {
    if (config_.cell == CellKind::GRU) {
      h = gru_layer(h, layer[0], config_.hidden_size, false);
    } else if (config_.cell == CellKind::LSTM) {
      h = lstm_layer(h, layer[0], config_.hidden_size, false);
    } else {
      h = concat({lstm_layer(h, layer[0], config_.hidden_size, false), lstm_layer(h, layer[1], config_.hidden_size, true)},
                 -1);
    }
  }
  return add(matmul(h, head_w_), head_b_);
}

}  // namespace uwbseq::models

#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "uwbseq/ad/optim.hpp"
#include "uwbseq/ad/var.hpp"

namespace uwbseq::models {

using ad::Var;

// Sequence-to-sequence regressor: [batch, S, input_dim] -> [batch, S, label_dim].
class SequenceModel {
public:
  explicit SequenceModel(std::uint64_t seed) : params_(seed) {}
  virtual ~SequenceModel() = default;

  virtual Var forward(const Var& x) = 0;
  virtual std::string kind() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t label_dim() const = 0;

  ad::ParameterSet& parameters() { return params_; }
  const ad::ParameterSet& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

protected:
  ad::ParameterSet params_;
};

struct MambaConfig {
  std::size_t input_dim = 20;
  std::size_t d_model = 64;
  std::size_t n_blocks = 4;
  std::size_t d_state = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;  // 0 disables the convolution
  std::size_t dt_rank = 0;     // 0 -> ceil(d_model / 16)
  std::size_t label_dim = 6;
  std::size_t window = 100;
  double dt_min = 0.001;
  double dt_max = 0.1;

  std::size_t d_inner() const { return expand * d_model; }
  std::size_t resolved_dt_rank() const { return dt_rank ? dt_rank : (d_model + 15) / 16; }
  void validate() const;
};

enum class CellKind { GRU, LSTM, BiLSTM };

std::string cell_name(CellKind kind);
CellKind parse_cell(const std::string& name);

struct RnnConfig {
  CellKind cell = CellKind::BiLSTM;
  std::size_t hidden_size = 128;
  std::size_t n_layers = 2;
  std::size_t input_dim = 20;
  std::size_t label_dim = 6;

  void validate() const;
};

}  // namespace uwbseq::models

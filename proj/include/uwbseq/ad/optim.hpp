#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uwbseq/ad/var.hpp"

namespace uwbseq::ad {

struct Parameter {
  std::string name;
  Var var;
};

// Ordered collection of trainable tensors. Initialization draws from a stream
// keyed by (seed, name), so a parameter's initial value does not depend on
// what else was created before it.
class ParameterSet {
public:
  explicit ParameterSet(std::uint64_t seed = 0) : seed_(seed) {}

  Var zeros(const std::string& name, Shape shape);
  Var constant(const std::string& name, Shape shape, Real value);
  Var uniform(const std::string& name, Shape shape, Real bound);
  Var normal(const std::string& name, Shape shape, Real stddev);
  Var from_tensor(const std::string& name, Tensor value);

  const std::vector<Parameter>& items() const { return params_; }
  std::vector<Parameter>& items() { return params_; }
  const Var& get(const std::string& name) const;
  std::size_t count() const;  // scalar parameter count
  std::uint64_t seed() const { return seed_; }

  void zero_grad();

private:
  Var add(const std::string& name, Tensor value);

  std::uint64_t seed_;
  std::vector<Parameter> params_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

// One bias-corrected Adam update of every parameter from its accumulated gradient.
void adam_step(ParameterSet& params, AdamState& state, double lr, const AdamConfig& config = {});

// lr0 * factor^floor(epoch / step)
double lr_schedule(int epoch, double lr0 = 0.001, int step = 20, double factor = 0.5);

// Checkpoint file, little-endian:
//   "UWBSEQCK" | u32 version=1 | u64 config_hash | u32 count
//   | per tensor: u32 name_len | name | u32 rank | u64 dims[rank] | f64 data[numel]
void save_checkpoint(const ParameterSet& params, std::uint64_t config_hash, const std::filesystem::path& path);
// Throws std::runtime_error on a config-hash, name or shape mismatch.
void load_checkpoint(ParameterSet& params, std::uint64_t config_hash, const std::filesystem::path& path);

}  // namespace uwbseq::ad

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "uwbseq/go.hpp"
#include "uwbseq/models/train.hpp"
#include "uwbseq/sim.hpp"

namespace uwbseq {

struct EnvironmentSection {
  CampusConfig campus;
  // Prior-map error field behind the OSL labels.
  int osl_bumps = 12;
  double osl_z_amplitude = 1.5;
  double osl_xy_bound = 0.5;
  double osl_min_length_scale = 15.0;
  double osl_max_length_scale = 60.0;
};

struct NoiseSection {
  NoiseModel model;
  double rate_hz = 10.0;  // per tag-anchor pair
};

struct DatasetSection {
  int n_trials = 23;
  int n_train = 18;
  std::size_t window = 100;
  double bin_width = kBinWidth;
  std::string labels = "osl";  // osl | gt
  int tags = 2;                 // 1 | 2
  // Tag offsets in the vehicle body frame (tag i has id i).
  std::vector<Vec3> mounts = {Vec3(1.0, 0.5, 0.0), Vec3(-1.0, -0.5, 0.0)};
};

struct ModelSection {
  std::vector<std::string> kinds = {"mamba", "bilstm"};
  models::MambaConfig mamba;
  models::RnnConfig rnn;
};

struct EvalSection {
  // last: final step of the window ending at each frame; average: mean over
  // every window covering the frame.
  std::string aggregation = "last";
  std::vector<std::string> ablation_models = {"mamba", "bilstm"};
};

struct RunConfig {
  EnvironmentSection environment;
  NoiseSection noise;
  TrajectoryConfig trajectory;
  DatasetSection dataset;
  ModelSection model;
  models::TrainConfig train;
  go::GoConfig go;
  EvalSection eval;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  // FNV-1a over the canonical (key-sorted) JSON of everything except the seed.
  std::uint64_t hash() const;
};

nlohmann::json config_to_json(const RunConfig& config);
// Overlays `doc` onto `base`; keys that `base` does not have are rejected
// with std::invalid_argument naming the dotted path.
RunConfig config_from_json(const nlohmann::json& doc, const RunConfig& base = {});

// Built-in profiles: "desk" (small sizes, short training) and "paper".
RunConfig profile(const std::string& name);
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base);

}  // namespace uwbseq

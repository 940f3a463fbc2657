#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "uwbseq/dataset.hpp"
#include "uwbseq/models/mamba.hpp"
#include "uwbseq/models/rnn.hpp"

namespace uwbseq::models {

struct TrainConfig {
  std::size_t batch = 64;
  int epochs = 150;
  double lr0 = 0.001;
  int lr_step = 20;
  double lr_factor = 0.5;
  int repeats = 5;
  std::uint64_t seed = 0;
  // Stop after this many optimizer steps (0 = run every epoch).
  std::size_t max_steps = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_rmse = 0.0;  // NaN when no evaluation hook ran
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::size_t steps = 0;
};

class TrainingDiverged : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Called after each epoch; returns the test metric for the log (or NaN).
using EpochHook = std::function<double(int epoch)>;

// Seeded shuffle per epoch, mini-batches, Adam with the step schedule.
// Throws TrainingDiverged when the loss becomes non-finite.
TrainResult train(SequenceModel& model, const WindowedDataset& data, const TrainConfig& config,
                  const EpochHook& hook = {});

// Stacks the normalized windows `indices` into [n, S, input_dim] / [n, S, label_dim].
ad::Tensor batch_inputs(const WindowedDataset& data, const std::vector<std::size_t>& indices);
ad::Tensor batch_labels(const WindowedDataset& data, const std::vector<std::size_t>& indices);

enum class Aggregation { Average, Last };

// Per-frame predictions in meters (K x label_dim, row-major) for one trial of
// the dataset. Average: mean over every window covering the frame. Last: the
// final step of the window ending at the frame (the first S-1 frames use the
// first window).
std::vector<double> predict_trial(SequenceModel& model, const WindowedDataset& data, std::size_t trial_index,
                                  Aggregation mode = Aggregation::Average, std::size_t batch = 64);

struct ModelSpec {
  std::string kind = "mamba";  // mamba | gru | lstm | bilstm
  MambaConfig mamba;
  RnnConfig rnn;
};

// Input/label sizes (and the Mamba window) are taken from the arguments.
std::unique_ptr<SequenceModel> make_model(const ModelSpec& spec, std::size_t input_dim, std::size_t label_dim,
                                          std::size_t window, std::uint64_t seed);

}  // namespace uwbseq::models

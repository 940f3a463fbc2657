#include "uwbseq/models/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "uwbseq/ad/ops.hpp"
#include "uwbseq/rng.hpp"

namespace uwbseq::models {

using ad::Tensor;

Tensor batch_inputs(const WindowedDataset& data, const std::vector<std::size_t>& indices) {
  std::vector<double> buf;
  buf.reserve(indices.size() * data.window_length() * data.input_dim());
  for (auto i : indices) data.window_inputs(i, buf);
  return Tensor({indices.size(), data.window_length(), data.input_dim()}, std::vector<ad::Real>(buf.begin(), buf.end()));
}

Tensor batch_labels(const WindowedDataset& data, const std::vector<std::size_t>& indices) {
  std::vector<double> buf;
  buf.reserve(indices.size() * data.window_length() * data.label_dim());
  for (auto i : indices) data.window_labels(i, buf);
  return Tensor({indices.size(), data.window_length(), data.label_dim()}, std::vector<ad::Real>(buf.begin(), buf.end()));
}

TrainResult train(SequenceModel& model, const WindowedDataset& data, const TrainConfig& config, const EpochHook& hook) {
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (config.batch == 0 || config.epochs <= 0) throw std::invalid_argument("train: batch and epochs must be positive");
  TrainResult result;
  ad::AdamState adam;
  std::vector<std::size_t> order(data.size());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = ad::lr_schedule(epoch, config.lr0, config.lr_step, config.lr_factor);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto g = named_stream(config.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[g() % i]);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    bool stop = false;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(start + config.batch, order.size())));
      const ad::Var x(batch_inputs(data, idx));
      const ad::Var y(batch_labels(data, idx));
      model.parameters().zero_grad();
      const ad::Var loss = ad::mse_loss(model.forward(x), y);
      const double l = loss.value().item();
      if (!std::isfinite(l))
        throw TrainingDiverged(model.kind() + ": non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(result.steps) + " (lr " + std::to_string(lr) + ")");
      ad::backward(loss);
      ad::adam_step(model.parameters(), adam, lr);
      loss_sum += l * static_cast<double>(idx.size());
      seen += idx.size();
      ++result.steps;
      if (config.max_steps && result.steps >= config.max_steps) {
        stop = true;
        break;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.test_rmse = hook ? hook(epoch) : std::numeric_limits<double>::quiet_NaN();
    result.curve.push_back(rec);
    if (stop) break;
  }
  return result;
}

std::vector<double> predict_trial(SequenceModel& model, const WindowedDataset& data, std::size_t trial_index,
                                  Aggregation mode, std::size_t batch) {
  const auto& trial = data.trials().at(trial_index);
  const std::size_t k = trial.frames();
  const std::size_t s = data.window_length();
  const std::size_t ld = data.label_dim();
  std::vector<std::size_t> windows;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.windows()[i].trial == trial_index) windows.push_back(i);

  std::vector<double> sum(k * ld, 0.0), count(k, 0.0);
  ad::NoGradGuard no_grad;
  for (std::size_t start = 0; start < windows.size(); start += batch) {
    const std::vector<std::size_t> idx(windows.begin() + static_cast<std::ptrdiff_t>(start),
                                       windows.begin() + static_cast<std::ptrdiff_t>(std::min(start + batch, windows.size())));
    const ad::Var out = model.forward(ad::Var(batch_inputs(data, idx)));
    const ad::Real* p = out.value().data();
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::size_t w0 = data.windows()[idx[j]].start;
      for (std::size_t t = 0; t < s; ++t) {
        const std::size_t frame = w0 + t;
        const bool use = mode == Aggregation::Average || t == s - 1 || (w0 == 0);
        if (!use) continue;
        for (std::size_t c = 0; c < ld; ++c) sum[frame * ld + c] += p[(j * s + t) * ld + c];
        count[frame] += 1.0;
      }
    }
  }
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t c = 0; c < ld; ++c) sum[f * ld + c] /= count[f];
    data.scaler().invert_labels(std::span<double>(sum).subspan(f * ld, ld));
  }
  return sum;
}

std::unique_ptr<SequenceModel> make_model(const ModelSpec& spec, std::size_t input_dim, std::size_t label_dim,
                                          std::size_t window, std::uint64_t seed) {
  if (spec.kind == "mamba") {
    MambaConfig c = spec.mamba;
    c.input_dim = input_dim;
    c.label_dim = label_dim;
    c.window = window;
    return std::make_unique<MambaModel>(c, seed);
  }
  RnnConfig c = spec.rnn;
  c.cell = parse_cell(spec.kind);
  c.input_dim = input_dim;
  c.label_dim = label_dim;
  return std::make_unique<RnnModel>(c, seed);
}

}  // namespace uwbseq::models

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "uwbseq/sim.hpp"

namespace uwbseq {

// Slot order: all anchors of the first tag, then all anchors of the next tag.
struct ChannelLayout {
  std::vector<int> tag_ids;
  std::vector<int> anchor_ids;

  std::size_t input_dim() const { return tag_ids.size() * anchor_ids.size(); }
  std::size_t label_dim() const { return 3 * tag_ids.size(); }
  // -1 when the pair is not part of the layout.
  int slot(int tag_id, int anchor_id) const;

  static ChannelLayout make(int n_tags, int n_anchors);
  bool operator==(const ChannelLayout&) const = default;
};

struct FrameVector {
  double stamp = 0.0;
  std::vector<double> values;
};

struct LabelVector {
  double stamp = 0.0;
  std::vector<double> values;
  bool clamped = false;
};

struct LabeledFrame {
  FrameVector frame;
  LabelVector label;
};

constexpr double kBinWidth = 0.050;

// Bins are [t0 + k*w, t0 + (k+1)*w) with t0 the first stamp; each slot keeps
// the latest measurement in its bin and stays 0 when none arrived.
// Throws std::invalid_argument naming the record if a tag/anchor id is not in the layout.
std::vector<FrameVector> bin_measurements(std::vector<MeasurementRecord> log, const ChannelLayout& layout,
                                          double bin_width = kBinWidth);

// Drops records whose tag is not part of the layout.
std::vector<MeasurementRecord> filter_tags(const std::vector<MeasurementRecord>& log, const ChannelLayout& layout);

// Samples the label source at every frame stamp. `tag_columns` selects which
// tags of the source make up the label, in order.
std::vector<LabeledFrame> attach_labels(const std::vector<FrameVector>& frames, const TagTrack& source,
                                        const std::vector<std::size_t>& tag_columns);

struct Normalizer {
  double range_scale = 1.0;
  Vec3 position_center = Vec3::Zero();
  double position_scale = 1.0;

  void apply_inputs(std::span<double> ranges) const;
  void invert_inputs(std::span<double> ranges) const;
  void apply_labels(std::span<double> xyz) const;
  void invert_labels(std::span<double> xyz) const;
};

// One trial's frames, row-major K x dim blocks.
struct TrialFrames {
  int trial_id = 0;
  std::vector<double> stamps;
  std::vector<double> inputs;
  std::vector<double> labels;  // training target (OSL or ground truth)
  std::vector<double> truth;   // always ground truth
  std::size_t frames() const { return stamps.size(); }
};

// Normalizer fitted on the given (training) trials: ranges / max range,
// positions centered on the label centroid and divided by the largest
// centered |coordinate|.
Normalizer fit_normalizer(const std::vector<TrialFrames>& training, std::size_t input_dim, std::size_t label_dim);

class WindowedDataset {
public:
  struct WindowRef {
    std::size_t trial;
    std::size_t start;
  };

  WindowedDataset() = default;
  WindowedDataset(ChannelLayout layout, std::size_t window);

  // Adds the K - S + 1 stride-1 windows of the trial; throws when K < S.
  void add_trial(TrialFrames trial);

  const ChannelLayout& layout() const { return layout_; }
  std::size_t window_length() const { return window_; }
  std::size_t input_dim() const { return layout_.input_dim(); }
  std::size_t label_dim() const { return layout_.label_dim(); }
  std::size_t size() const { return windows_.size(); }
  const std::vector<WindowRef>& windows() const { return windows_; }
  const std::vector<TrialFrames>& trials() const { return trials_; }

  const Normalizer& scaler() const { return scaler_; }
  void set_scaler(const Normalizer& n) { scaler_ = n; }

  // Normalized window contents appended to `out` (S x input_dim / S x label_dim).
  void window_inputs(std::size_t i, std::vector<double>& out) const;
  void window_labels(std::size_t i, std::vector<double>& out) const;

private:
  ChannelLayout layout_;
  std::size_t window_ = 1;
  std::vector<TrialFrames> trials_;
  std::vector<WindowRef> windows_;
  Normalizer scaler_;
};

// Builds one trial's windows: exactly K - S + 1, window i starting at frame i.
WindowedDataset make_windows(const std::vector<LabeledFrame>& pairs, const ChannelLayout& layout, std::size_t window,
                             int trial_id = 0);

TrialFrames to_trial_frames(const std::vector<LabeledFrame>& pairs, const std::vector<LabeledFrame>& truth,
                            int trial_id);

struct TrialSplit {
  std::vector<Trial> train;
  std::vector<Trial> test;
};
// Throws std::invalid_argument when the id sets overlap or name a missing trial.
TrialSplit split_trials(const std::vector<Trial>& trials, const std::vector<int>& train_ids,
                        const std::vector<int>& test_ids);

struct DatasetHeader {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

// Binary dataset file, little-endian:
//   "UWBSEQDS" | u32 version=1 | u64 config_hash | u64 seed | u32 S
//   | u32 n_tags | i32 tag ids | u32 n_anchors | i32 anchor ids
//   | f64 range_scale | f64 center[3] | f64 position_scale | u32 n_trials
//   | per trial: i32 trial_id | u64 K | f64 stamps[K] | f64 inputs[K*in]
//                | f64 labels[K*lab] | f64 truth[K*lab]
// Values are stored raw (un-normalized); windows are the stride-1 views.
void write_dataset(const WindowedDataset& ds, const DatasetHeader& header, const std::filesystem::path& path);
WindowedDataset read_dataset(const std::filesystem::path& path, DatasetHeader* header = nullptr);

// stamp, r_t<tag>_a<anchor>..., then label x/y/z per tag; one row per frame.
void export_frames_csv(const TrialFrames& trial, const ChannelLayout& layout, const std::filesystem::path& path,
                       const std::string& provenance = {});

}  // namespace uwbseq

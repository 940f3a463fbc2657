#include "uwbseq/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include "uwbseq/csv.hpp"

namespace uwbseq {

int ChannelLayout::slot(int tag_id, int anchor_id) const {
  const auto ti = std::find(tag_ids.begin(), tag_ids.end(), tag_id);
  const auto ai = std::find(anchor_ids.begin(), anchor_ids.end(), anchor_id);
  if (ti == tag_ids.end() || ai == anchor_ids.end()) return -1;
  return static_cast<int>((ti - tag_ids.begin()) * anchor_ids.size() + (ai - anchor_ids.begin()));
}

ChannelLayout ChannelLayout::make(int n_tags, int n_anchors) {
  ChannelLayout l;
  for (int i = 0; i < n_tags; ++i) l.tag_ids.push_back(i);
  for (int i = 0; i < n_anchors; ++i) l.anchor_ids.push_back(i);
  return l;
}

std::vector<MeasurementRecord> filter_tags(const std::vector<MeasurementRecord>& log, const ChannelLayout& layout) {
  std::vector<MeasurementRecord> out;
  out.reserve(log.size());
  for (const auto& r : log)
    if (std::find(layout.tag_ids.begin(), layout.tag_ids.end(), r.tag_id) != layout.tag_ids.end()) out.push_back(r);
  return out;
}

std::vector<FrameVector> bin_measurements(std::vector<MeasurementRecord> log, const ChannelLayout& layout,
                                          double bin_width) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("bin_measurements: bin width must be positive");
  std::vector<FrameVector> frames;
  if (log.empty()) return frames;
  std::stable_sort(log.begin(), log.end(), [](const auto& a, const auto& b) { return a.stamp < b.stamp; });

  const double t0 = log.front().stamp;
  const auto n_bins = static_cast<std::size_t>(std::floor((log.back().stamp - t0) / bin_width)) + 1;
  frames.resize(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) {
    frames[k].stamp = t0 + (static_cast<double>(k) + 0.5) * bin_width;
    frames[k].values.assign(layout.input_dim(), 0.0);
  }
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& r = log[i];
    const int s = layout.slot(r.tag_id, r.anchor_id);
    if (s < 0)
      throw std::invalid_argument("bin_measurements: record " + std::to_string(i) + " (stamp " + fmt_sig(r.stamp) +
                                  ", tag " + std::to_string(r.tag_id) + ", anchor " + std::to_string(r.anchor_id) +
                                  ") is not in the channel layout");
    const auto k = std::min(static_cast<std::size_t>(std::floor((r.stamp - t0) / bin_width)), n_bins - 1);
    // Sorted by stamp, so a later write is the latest measurement.
    frames[k].values[static_cast<std::size_t>(s)] = r.range;
  }
  return frames;
}

std::vector<LabeledFrame> attach_labels(const std::vector<FrameVector>& frames, const TagTrack& source,
                                        const std::vector<std::size_t>& tag_columns) {
  if (source.empty()) throw std::invalid_argument("attach_labels: empty label source");
  for (auto c : tag_columns)
    if (c >= source.n_tags()) throw std::invalid_argument("attach_labels: label source lacks tag column " + std::to_string(c));
  std::vector<LabeledFrame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    const auto s = source.sample(f.stamp);
    LabeledFrame lf;
    lf.frame = f;
    lf.label.stamp = f.stamp;
    lf.label.clamped = s.clamped;
    for (auto c : tag_columns)
      for (int d = 0; d < 3; ++d) lf.label.values.push_back(s.positions[c][d]);
    out.push_back(std::move(lf));
  }
  return out;
}

void Normalizer::apply_inputs(std::span<double> ranges) const {
  for (auto& r : ranges) r /= range_scale;
}

void Normalizer::invert_inputs(std::span<double> ranges) const {
  for (auto& r : ranges) r *= range_scale;
}

void Normalizer::apply_labels(std::span<double> xyz) const {
  for (std::size_t i = 0; i < xyz.size(); ++i) xyz[i] = (xyz[i] - position_center[static_cast<int>(i % 3)]) / position_scale;
}

void Normalizer::invert_labels(std::span<double> xyz) const {
  for (std::size_t i = 0; i < xyz.size(); ++i) xyz[i] = xyz[i] * position_scale + position_center[static_cast<int>(i % 3)];
}

Normalizer fit_normalizer(const std::vector<TrialFrames>& training, std::size_t input_dim, std::size_t label_dim) {
  if (training.empty()) throw std::invalid_argument("fit_normalizer: empty training set");
  (void)input_dim;
  Normalizer n;
  double max_range = 0.0;
  Vec3 sum = Vec3::Zero();
  std::size_t count = 0;
  for (const auto& t : training) {
    for (double r : t.inputs) max_range = std::max(max_range, r);
    for (std::size_t i = 0; i + 2 < t.labels.size(); i += 3) {
      sum += Vec3(t.labels[i], t.labels[i + 1], t.labels[i + 2]);
      ++count;
    }
  }
  if (!(max_range > 0.0)) throw std::invalid_argument("fit_normalizer: degenerate range scale (all ranges zero)");
  if (count == 0 || label_dim % 3 != 0) throw std::invalid_argument("fit_normalizer: no labels");
  n.range_scale = max_range;
  n.position_center = sum / static_cast<double>(count);
  double max_dev = 0.0;
  for (const auto& t : training)
    for (std::size_t i = 0; i < t.labels.size(); ++i)
      max_dev = std::max(max_dev, std::abs(t.labels[i] - n.position_center[static_cast<int>(i % 3)]));
  n.position_scale = max_dev > 0.0 ? max_dev : 1.0;
  return n;
}

WindowedDataset::WindowedDataset(ChannelLayout layout, std::size_t window) : layout_(std::move(layout)), window_(window) {
  if (window_ == 0) throw std::invalid_argument("window length must be positive");
}

void WindowedDataset::add_trial(TrialFrames trial) {
  const std::size_t k = trial.frames();
  if (k < window_)
    throw std::invalid_argument("trial " + std::to_string(trial.trial_id) + " has K=" + std::to_string(k) +
                                " frames, fewer than S=" + std::to_string(window_));
  if (trial.inputs.size() != k * input_dim() || trial.labels.size() != k * label_dim() ||
      trial.truth.size() != k * label_dim())
    throw std::invalid_argument("trial " + std::to_string(trial.trial_id) + " does not match the channel layout");
  const std::size_t t = trials_.size();
  trials_.push_back(std::move(trial));
  for (std::size_t s = 0; s + window_ <= k; ++s) windows_.push_back({t, s});
}

void WindowedDataset::window_inputs(std::size_t i, std::vector<double>& out) const {
  const auto& w = windows_.at(i);
  const auto& tr = trials_[w.trial];
  const std::size_t d = input_dim();
  const std::size_t offset = out.size();
  out.insert(out.end(), tr.inputs.begin() + static_cast<std::ptrdiff_t>(w.start * d),
             tr.inputs.begin() + static_cast<std::ptrdiff_t>((w.start + window_) * d));
  scaler_.apply_inputs(std::span<double>(out).subspan(offset));
}

void WindowedDataset::window_labels(std::size_t i, std::vector<double>& out) const {
  const auto& w = windows_.at(i);
  const auto& tr = trials_[w.trial];
  const std::size_t d = label_dim();
  const std::size_t offset = out.size();
  out.insert(out.end(), tr.labels.begin() + static_cast<std::ptrdiff_t>(w.start * d),
             tr.labels.begin() + static_cast<std::ptrdiff_t>((w.start + window_) * d));
  scaler_.apply_labels(std::span<double>(out).subspan(offset));
}

TrialFrames to_trial_frames(const std::vector<LabeledFrame>& pairs, const std::vector<LabeledFrame>& truth,
                            int trial_id) {
  if (pairs.size() != truth.size()) throw std::invalid_argument("to_trial_frames: label/truth length mismatch");
  TrialFrames t;
  t.trial_id = trial_id;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    t.stamps.push_back(pairs[k].frame.stamp);
    t.inputs.insert(t.inputs.end(), pairs[k].frame.values.begin(), pairs[k].frame.values.end());
    t.labels.insert(t.labels.end(), pairs[k].label.values.begin(), pairs[k].label.values.end());
    t.truth.insert(t.truth.end(), truth[k].label.values.begin(), truth[k].label.values.end());
  }
  return t;
}

WindowedDataset make_windows(const std::vector<LabeledFrame>& pairs, const ChannelLayout& layout, std::size_t window,
                             int trial_id) {
  if (pairs.size() < window)
    throw std::invalid_argument("make_windows: K=" + std::to_string(pairs.size()) + " < S=" + std::to_string(window));
  WindowedDataset ds(layout, window);
  ds.add_trial(to_trial_frames(pairs, pairs, trial_id));
  return ds;
}

TrialSplit split_trials(const std::vector<Trial>& trials, const std::vector<int>& train_ids,
                        const std::vector<int>& test_ids) {
  const std::set<int> train(train_ids.begin(), train_ids.end());
  for (int id : test_ids)
    if (train.count(id)) throw std::invalid_argument("split_trials: trial " + std::to_string(id) + " is in both splits");
  TrialSplit split;
  auto find = [&](int id) -> const Trial& {
    for (const auto& t : trials)
      if (t.trial_id == id) return t;
    throw std::invalid_argument("split_trials: unknown trial id " + std::to_string(id));
  };
  for (int id : train_ids) split.train.push_back(find(id));
  for (int id : test_ids) split.test.push_back(find(id));
  return split;
}

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("dataset file truncated");
  return v;
}

void put_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::ifstream& in, std::size_t n) {
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("dataset file truncated");
  return v;
}

constexpr char kMagic[8] = {'U', 'W', 'B', 'S', 'E', 'Q', 'D', 'S'};

}  // namespace

void write_dataset(const WindowedDataset& ds, const DatasetHeader& header, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, 1);
  put<std::uint64_t>(out, header.config_hash);
  put<std::uint64_t>(out, header.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.window_length()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.layout().tag_ids.size()));
  for (int id : ds.layout().tag_ids) put<std::int32_t>(out, id);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.layout().anchor_ids.size()));
  for (int id : ds.layout().anchor_ids) put<std::int32_t>(out, id);
  const auto& n = ds.scaler();
  put(out, n.range_scale);
  for (int i = 0; i < 3; ++i) put(out, n.position_center[i]);
  put(out, n.position_scale);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.trials().size()));
  for (const auto& t : ds.trials()) {
    put<std::int32_t>(out, t.trial_id);
    put<std::uint64_t>(out, t.frames());
    put_doubles(out, t.stamps);
    put_doubles(out, t.inputs);
    put_doubles(out, t.labels);
    put_doubles(out, t.truth);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

WindowedDataset read_dataset(const std::filesystem::path& path, DatasetHeader* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error(path.string() + ": not a dataset file");
  if (get<std::uint32_t>(in) != 1) throw std::runtime_error(path.string() + ": unsupported dataset version");
  DatasetHeader h;
  h.config_hash = get<std::uint64_t>(in);
  h.seed = get<std::uint64_t>(in);
  const auto s = get<std::uint32_t>(in);
  ChannelLayout layout;
  for (auto n = get<std::uint32_t>(in); n > 0; --n) layout.tag_ids.push_back(get<std::int32_t>(in));
  for (auto n = get<std::uint32_t>(in); n > 0; --n) layout.anchor_ids.push_back(get<std::int32_t>(in));
  Normalizer norm;
  norm.range_scale = get<double>(in);
  for (int i = 0; i < 3; ++i) norm.position_center[i] = get<double>(in);
  norm.position_scale = get<double>(in);
  WindowedDataset ds(layout, s);
  ds.set_scaler(norm);
  for (auto n = get<std::uint32_t>(in); n > 0; --n) {
    TrialFrames t;
    t.trial_id = get<std::int32_t>(in);
    const auto k = static_cast<std::size_t>(get<std::uint64_t>(in));
    t.stamps = get_doubles(in, k);
    t.inputs = get_doubles(in, k * layout.input_dim());
    t.labels = get_doubles(in, k * layout.label_dim());
    t.truth = get_doubles(in, k * layout.label_dim());
    ds.add_trial(std::move(t));
  }
  if (header) *header = h;
  return ds;
}

void export_frames_csv(const TrialFrames& trial, const ChannelLayout& layout, const std::filesystem::path& path,
                       const std::string& provenance) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (!provenance.empty()) out << provenance << '\n';
  out << "stamp";
  for (int t : layout.tag_ids)
    for (int a : layout.anchor_ids) out << ",r_t" << t << "_a" << a;
  for (int t : layout.tag_ids) out << ",x" << t << ",y" << t << ",z" << t;
  out << '\n';
  const std::size_t din = layout.input_dim(), dl = layout.label_dim();
  for (std::size_t k = 0; k < trial.frames(); ++k) {
    out << fmt_exact(trial.stamps[k]);
    for (std::size_t i = 0; i < din; ++i) out << ',' << fmt_exact(trial.inputs[k * din + i]);
    for (std::size_t i = 0; i < dl; ++i) out << ',' << fmt_exact(trial.labels[k * dl + i]);
    out << '\n';
  }
}

}  // namespace uwbseq

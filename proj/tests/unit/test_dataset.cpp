#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "uwbseq/dataset.hpp"
#include "uwbseq/rng.hpp"

using namespace uwbseq;

namespace {

std::vector<MeasurementRecord> random_log(std::mt19937_64& g, int n, int n_tags, int n_anchors, double span) {
  std::vector<MeasurementRecord> log;
  for (int i = 0; i < n; ++i)
    log.push_back({uniform(g, 0.0, span), static_cast<int>(g() % static_cast<unsigned>(n_tags)),
                   static_cast<int>(g() % static_cast<unsigned>(n_anchors)), uniform(g, 1.0, 150.0)});
  return log;
}

std::vector<LabeledFrame> synthetic_pairs(std::size_t k, std::size_t in_dim, std::size_t lab_dim, double offset = 0) {
  std::vector<LabeledFrame> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    out[i].frame.stamp = out[i].label.stamp = 0.05 * static_cast<double>(i);
    for (std::size_t j = 0; j < in_dim; ++j) out[i].frame.values.push_back((i + j) % 3 ? 10.0 + i + j : 0.0);
    for (std::size_t j = 0; j < lab_dim; ++j) out[i].label.values.push_back(offset + static_cast<double>(i) - j);
  }
  return out;
}

}  // namespace

TEST(Layout, SlotOrderIsTagMajor) {
  const auto l = ChannelLayout::make(2, 3);
  EXPECT_EQ(l.input_dim(), 6u);
  EXPECT_EQ(l.label_dim(), 6u);
  EXPECT_EQ(l.slot(l.tag_ids[0], l.anchor_ids[2]), 2);
  EXPECT_EQ(l.slot(l.tag_ids[1], l.anchor_ids[0]), 3);
  EXPECT_EQ(l.slot(99, l.anchor_ids[0]), -1);
}

TEST(Binning, LatestMeasurementWinsAndGapsStayZero) {
  const auto l = ChannelLayout::make(1, 2);
  const int t = l.tag_ids[0], a0 = l.anchor_ids[0], a1 = l.anchor_ids[1];
  const std::vector<MeasurementRecord> log = {{0.00, t, a0, 5.0}, {0.03, t, a0, 6.0}, {0.01, t, a1, 7.0},
                                              {0.16, t, a1, 8.0}};
  const auto f = bin_measurements(log, l);
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[0].values, (std::vector<double>{6.0, 7.0}));
  EXPECT_EQ(f[1].values, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(f[3].values, (std::vector<double>{0.0, 8.0}));
  EXPECT_NEAR(f[0].stamp, 0.025, 1e-12);
}

TEST(Binning, UnknownIdNamesTheRecord) {
  const auto l = ChannelLayout::make(1, 2);
  const std::vector<MeasurementRecord> log = {{0.0, l.tag_ids[0], l.anchor_ids[0], 5.0}, {0.1, l.tag_ids[0], 77, 6.0}};
  try {
    bin_measurements(log, l);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("anchor 77"), std::string::npos) << e.what();
  }
  EXPECT_EQ(filter_tags({{0.0, 5, l.anchor_ids[0], 1.0}}, l).size(), 0u);
}

TEST(Binning, ZerosMatchReplayOracleAndSurviveNormalization) {
  std::mt19937_64 g(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto l = ChannelLayout::make(2, 4);
    auto log = random_log(g, 300, 2, 4, 10.0);
    for (auto& r : log) r.tag_id = l.tag_ids[static_cast<std::size_t>(r.tag_id)],
                        r.anchor_id = l.anchor_ids[static_cast<std::size_t>(r.anchor_id)];
    const auto frames = bin_measurements(log, l);

    // Replay: walk the log in time order, remembering the last value per (bin, slot).
    auto ordered = log;
    std::stable_sort(ordered.begin(), ordered.end(), [](auto& a, auto& b) { return a.stamp < b.stamp; });
    const double t0 = ordered.front().stamp;
    std::map<std::pair<std::size_t, int>, double> seen;
    for (const auto& r : ordered) {
      const auto k = std::min(static_cast<std::size_t>((r.stamp - t0) / kBinWidth), frames.size() - 1);
      seen[{k, l.slot(r.tag_id, r.anchor_id)}] = r.range;
    }
    Normalizer n;
    n.range_scale = 137.0;
    for (std::size_t k = 0; k < frames.size(); ++k) {
      auto v = frames[k].values;
      n.apply_inputs(v);
      for (int s = 0; s < static_cast<int>(l.input_dim()); ++s) {
        const auto it = seen.find({k, s});
        const double raw = frames[k].values[static_cast<std::size_t>(s)];
        if (it == seen.end()) {
          ASSERT_EQ(raw, 0.0);
          ASSERT_EQ(v[static_cast<std::size_t>(s)], 0.0);
        } else {
          ASSERT_EQ(raw, it->second);
          ASSERT_NE(v[static_cast<std::size_t>(s)], 0.0);
        }
      }
    }
  }
}

TEST(Windows, CountIsKMinusSPlusOne) {
  std::mt19937_64 g(22);
  const auto l = ChannelLayout::make(1, 2);
  for (int i = 0; i < 200; ++i) {
    const std::size_t s = 1 + g() % 40, k = s + g() % 80;
    const auto ds = make_windows(synthetic_pairs(k, 2, 3), l, s);
    ASSERT_EQ(ds.size(), k - s + 1) << "K=" << k << " S=" << s;
    ASSERT_EQ(ds.windows().back().start, k - s);
  }
  EXPECT_THROW(make_windows(synthetic_pairs(5, 2, 3), l, 6), std::invalid_argument);
}

TEST(Windows, ContentsAreNormalizedSlices) {
  const auto l = ChannelLayout::make(1, 2);
  auto ds = make_windows(synthetic_pairs(10, 2, 3), l, 4);
  Normalizer n;
  n.range_scale = 2.0;
  n.position_center = Vec3(1, 1, 1);
  n.position_scale = 4.0;
  ds.set_scaler(n);
  std::vector<double> in, lab;
  ds.window_inputs(3, in);
  ds.window_labels(3, lab);
  ASSERT_EQ(in.size(), 8u);
  ASSERT_EQ(lab.size(), 12u);
  EXPECT_EQ(in[0], 0.0);                       // frame 3, slot 0 is a gap
  EXPECT_DOUBLE_EQ(in[1], (10.0 + 3 + 1) / 2.0);
  EXPECT_DOUBLE_EQ(lab[0], (3.0 - 1.0) / 4.0);
}

TEST(Normalizer, InvertAfterApplyIsIdentity) {
  std::mt19937_64 g(23);
  for (int i = 0; i < 1000; ++i) {
    Normalizer n;
    n.range_scale = uniform(g, 1.0, 500.0);
    n.position_center = Vec3(uniform(g, -300, 300), uniform(g, -300, 300), uniform(g, -5, 5));
    n.position_scale = uniform(g, 0.5, 400.0);
    std::vector<double> r(12), p(6);
    for (auto& x : r) x = g() % 4 ? uniform(g, 0.1, 300.0) : 0.0;
    for (auto& x : p) x = uniform(g, -400, 400);
    auto r2 = r, p2 = p;
    n.apply_inputs(r2);
    n.invert_inputs(r2);
    n.apply_labels(p2);
    n.invert_labels(p2);
    for (std::size_t k = 0; k < r.size(); ++k) ASSERT_NEAR(r2[k], r[k], 1e-12 * std::max(1.0, std::abs(r[k])));
    for (std::size_t k = 0; k < p.size(); ++k) ASSERT_NEAR(p2[k], p[k], 1e-12 * std::max(1.0, std::abs(p[k])));
  }
}

TEST(Normalizer, FitMapsTrainingIntoUnitRange) {
  const auto l = ChannelLayout::make(2, 2);
  const auto a = to_trial_frames(synthetic_pairs(30, 4, 6, 100.0), synthetic_pairs(30, 4, 6, 100.0), 0);
  const auto b = to_trial_frames(synthetic_pairs(20, 4, 6, -50.0), synthetic_pairs(20, 4, 6, -50.0), 1);
  const Normalizer n = fit_normalizer({a, b}, l.input_dim(), l.label_dim());
  double max_r = 0.0, max_p = 0.0;
  for (const auto* t : {&a, &b}) {
    auto in = t->inputs, lab = t->labels;
    n.apply_inputs(in);
    n.apply_labels(lab);
    for (double x : in) max_r = std::max(max_r, x);
    for (double x : lab) max_p = std::max(max_p, std::abs(x));
  }
  EXPECT_NEAR(max_r, 1.0, 1e-12);
  EXPECT_NEAR(max_p, 1.0, 1e-12);
}

TEST(Labels, AttachSamplesSelectedTags) {
  TagTrack src;
  src.stamps = {0.0, 1.0};
  src.positions = {{Vec3(0, 0, 0), Vec3(10, 0, 0)}, {Vec3(2, 0, 0), Vec3(12, 0, 0)}};
  std::vector<FrameVector> frames = {{0.5, {1.0}}, {2.0, {1.0}}};
  const auto pairs = attach_labels(frames, src, {1});
  ASSERT_EQ(pairs[0].label.values.size(), 3u);
  EXPECT_DOUBLE_EQ(pairs[0].label.values[0], 11.0);
  EXPECT_FALSE(pairs[0].label.clamped);
  EXPECT_TRUE(pairs[1].label.clamped);
  EXPECT_THROW(attach_labels(frames, src, {2}), std::invalid_argument);
}

TEST(Split, RejectsOverlapAndMissingIds) {
  std::vector<Trial> trials(4);
  for (int i = 0; i < 4; ++i) trials[static_cast<std::size_t>(i)].trial_id = i;
  const auto s = split_trials(trials, {0, 1, 2}, {3});
  EXPECT_EQ(s.train.size(), 3u);
  EXPECT_EQ(s.test.front().trial_id, 3);
  EXPECT_THROW(split_trials(trials, {0, 1}, {1, 3}), std::invalid_argument);
  EXPECT_THROW(split_trials(trials, {0, 9}, {3}), std::invalid_argument);
}

TEST(DatasetFile, RoundTripIsExact) {
  const auto l = ChannelLayout::make(2, 2);
  WindowedDataset ds(l, 5);
  ds.add_trial(to_trial_frames(synthetic_pairs(12, 4, 6, 3.3), synthetic_pairs(12, 4, 6, 3.0), 4));
  ds.add_trial(to_trial_frames(synthetic_pairs(9, 4, 6, -1.7), synthetic_pairs(9, 4, 6, -2.0), 7));
  Normalizer n;
  n.range_scale = 3.25;
  n.position_center = Vec3(0.1, 0.2, 0.3);
  n.position_scale = 7.5;
  ds.set_scaler(n);
  const auto path = std::filesystem::temp_directory_path() / "uwbseq_ds_test.ds";
  write_dataset(ds, {0x1234, 99}, path);
  DatasetHeader h;
  const auto r = read_dataset(path, &h);
  EXPECT_EQ(h.config_hash, 0x1234u);
  EXPECT_EQ(h.seed, 99u);
  EXPECT_EQ(r.layout(), l);
  ASSERT_EQ(r.size(), ds.size());
  EXPECT_EQ(r.scaler().position_center, n.position_center);
  for (std::size_t i = 0; i < ds.size(); i += 3) {
    std::vector<double> a, b;
    ds.window_inputs(i, a);
    r.window_inputs(i, b);
    ds.window_labels(i, a);
    r.window_labels(i, b);
    ASSERT_EQ(a, b);
  }
  EXPECT_EQ(r.trials()[1].truth, ds.trials()[1].truth);
  std::filesystem::remove(path);
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "uwbseq/go.hpp"
#include "uwbseq/rng.hpp"

using namespace uwbseq;
using namespace uwbseq::go;

namespace {

// Non-coplanar anchors enclosing the test volume.
std::vector<AnchorParams> tetra_anchors(const ChannelLayout& l) {
  const Vec3 p[4] = {Vec3(0, 0, 0), Vec3(60, 0, 2), Vec3(30, 50, 1), Vec3(30, 20, 40)};
  std::vector<AnchorParams> a;
  for (std::size_t i = 0; i < 4; ++i) a.push_back({l.anchor_ids[i], p[i], 1.0 + 0.002 * i, 0.05 * i});
  return a;
}

std::vector<FrameVector> static_frames(const Vec3& pos, const ChannelLayout& l, const std::vector<AnchorParams>& a,
                                       const std::vector<TagMount>& mounts, std::size_t n) {
  std::vector<FrameVector> f(n);
  for (std::size_t k = 0; k < n; ++k) {
    f[k].stamp = 0.05 * static_cast<double>(k);
    f[k].values.assign(l.input_dim(), 0.0);
    for (std::size_t t = 0; t < l.tag_ids.size(); ++t)
      for (std::size_t j = 0; j < a.size(); ++j)
        f[k].values[static_cast<std::size_t>(l.slot(l.tag_ids[t], a[j].anchor_id))] =
            range_model(pos + mounts[t].body_offset, a[j]);
  }
  return f;
}

// Uniform point inside the tetrahedron spanned by the first four anchors.
Vec3 inside(std::mt19937_64& g, const std::vector<AnchorParams>& a) {
  double w[4], sum = 0.0;
  for (auto& x : w) sum += x = exponential(g, 1.0);
  Vec3 p = Vec3::Zero();
  for (std::size_t i = 0; i < 4; ++i) p += w[i] / sum * a[i].position;
  return p;
}

Vec3 centroid(const std::vector<AnchorParams>& a) {
  Vec3 c = Vec3::Zero();
  for (const auto& x : a) c += x.position / static_cast<double>(a.size());
  return c;
}

WindowProblem problem_for(const std::vector<FrameVector>& frames, const ChannelLayout& l,
                          const std::vector<AnchorParams>& a, const std::vector<TagMount>& m) {
  WindowProblem p;
  p.frames = &frames;
  p.first = 0;
  p.count = frames.size();
  p.layout = l;
  p.anchors = a;
  p.mounts = m;
  return p;
}

std::vector<std::vector<Vec3>> constant_init(std::size_t n, const std::vector<Vec3>& tags) {
  return std::vector<std::vector<Vec3>>(n, tags);
}

}  // namespace

TEST(Residual, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 g(31);
  for (int i = 0; i < 200; ++i) {
    const AnchorParams a{0, Vec3(uniform(g, -50, 50), uniform(g, -50, 50), uniform(g, 0, 5)), uniform(g, 0.98, 1.02),
                         uniform(g, -0.3, 0.3)};
    const Vec3 p(uniform(g, -50, 50), uniform(g, -50, 50), uniform(g, 0, 3));
    const double meas = uniform(g, 1, 80);
    const auto j = residual_jacobian(p, a);
    ASSERT_FALSE(j.singular);
    for (int d = 0; d < 3; ++d) {
      const double h = 1e-5;
      Vec3 up = p, dn = p;
      up[d] += h;
      dn[d] -= h;
      const double fd = (residual(up, meas, a) - residual(dn, meas, a)) / (2 * h);
      ASSERT_NEAR(j.gradient[d], fd, 1e-6);
    }
  }
}

TEST(Residual, SingularAtTheAnchor) {
  const AnchorParams a{0, Vec3(1, 2, 3), 1.0, 0.0};
  const auto j = residual_jacobian(Vec3(1, 2, 3 + 1e-7), a);
  EXPECT_TRUE(j.singular);
  EXPECT_EQ(j.gradient.norm(), 0.0);
  EXPECT_FALSE(residual_jacobian(Vec3(1, 2, 4), a).singular);
}

TEST(Huber, WeightAndCostAgree) {
  const double delta = 0.5;
  EXPECT_DOUBLE_EQ(huber_weight(0.3, delta), 1.0);
  EXPECT_DOUBLE_EQ(huber_weight(-2.0, delta), 0.25);
  EXPECT_DOUBLE_EQ(huber_rho(0.3, delta), 0.045);
  EXPECT_DOUBLE_EQ(huber_rho(-2.0, delta), 0.5 * (2.0 - 0.25));
  // rho'(r) = w(r) r
  for (double r : {-7.0, -0.6, -0.1, 0.2, 0.49, 3.0}) {
    const double h = 1e-6;
    EXPECT_NEAR((huber_rho(r + h, delta) - huber_rho(r - h, delta)) / (2 * h), huber_weight(r, delta) * r, 1e-8);
  }
}

TEST(Config, ValidateRejectsTinyWindow) {
  GoConfig c;
  c.window_frames = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Solver, RecoversStaticPositionsExactly) {
  const auto l = ChannelLayout::make(1, 4);
  const auto anchors = tetra_anchors(l);
  const std::vector<TagMount> mounts = {{l.tag_ids[0], Vec3::Zero()}};
  std::mt19937_64 g(32);
  GoConfig cfg;
  int converged = 0;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec3 truth = inside(g, anchors);
    const auto frames = static_frames(truth, l, anchors, mounts, 10);
    const auto sol = solve_window(problem_for(frames, l, anchors, mounts), cfg, constant_init(10, {centroid(anchors)}));
    converged += sol.converged;
    EXPECT_FALSE(sol.low_observability);
    for (const auto& f : sol.positions) worst = std::max(worst, (f[0] - truth).norm());
  }
  EXPECT_EQ(converged, 100);
  EXPECT_LT(worst, 1e-6);
}

TEST(Solver, CostTraceNeverIncreases) {
  const auto l = ChannelLayout::make(1, 4);
  const auto anchors = tetra_anchors(l);
  const std::vector<TagMount> mounts = {{l.tag_ids[0], Vec3::Zero()}};
  auto frames = static_frames(Vec3(30, 20, 8), l, anchors, mounts, 8);
  frames[3].values[1] += 4.0;
  const auto sol = solve_window(problem_for(frames, l, anchors, mounts), GoConfig{}, constant_init(8, {Vec3(5, 5, 5)}));
  ASSERT_GE(sol.cost_trace.size(), 2u);
  for (std::size_t i = 1; i < sol.cost_trace.size(); ++i) EXPECT_LE(sol.cost_trace[i], sol.cost_trace[i - 1]);
}

TEST(Solver, HuberBoundsASingleOutlier) {
  const auto l = ChannelLayout::make(1, 4);
  const auto anchors = tetra_anchors(l);
  const std::vector<TagMount> mounts = {{l.tag_ids[0], Vec3::Zero()}};
  GoConfig least_squares;
  least_squares.huber_delta = 1e6;
  std::mt19937_64 g(33);
  for (int i = 0; i < 20; ++i) {
    const Vec3 truth = inside(g, anchors);
    auto frames = static_frames(truth, l, anchors, mounts, 20);
    const auto init = constant_init(20, {centroid(anchors)});
    const auto clean = solve_window(problem_for(frames, l, anchors, mounts), GoConfig{}, init);
    frames[g() % 20].values[g() % 4] += 50.0;
    const auto huber = solve_window(problem_for(frames, l, anchors, mounts), GoConfig{}, init);
    const auto plain = solve_window(problem_for(frames, l, anchors, mounts), least_squares, init);
    Vec3 mean_shift = Vec3::Zero();
    double worst_huber = 0.0, worst_plain = 0.0;
    for (std::size_t k = 0; k < 20; ++k) {
      mean_shift += (huber.positions[k][0] - clean.positions[k][0]) / 20.0;
      worst_huber = std::max(worst_huber, (huber.positions[k][0] - clean.positions[k][0]).norm());
      worst_plain = std::max(worst_plain, (plain.positions[k][0] - clean.positions[k][0]).norm());
    }
    // The static estimate barely moves; single frames near the outlier move more
    // but far less than under a quadratic loss.
    EXPECT_LT(mean_shift.norm(), 0.05) << "case " << i;
    EXPECT_LT(worst_huber, 0.5) << "case " << i;
    EXPECT_GT(worst_plain, 5 * worst_huber) << "case " << i;
  }
}

TEST(Solver, TwoTagsKeepTheirSeparation) {
  const auto l = ChannelLayout::make(2, 4);
  const auto anchors = tetra_anchors(l);
  const std::vector<TagMount> mounts = {{l.tag_ids[0], Vec3(1, 0.5, 0)}, {l.tag_ids[1], Vec3(-1, -0.5, 0)}};
  const Vec3 body(30, 20, 8);
  auto frames = static_frames(body, l, anchors, mounts, 10);
  // Only tag 0 hears anchors in the second half; the link keeps tag 1 in place.
  for (std::size_t k = 5; k < 10; ++k)
    for (std::size_t s = 4; s < 8; ++s) frames[k].values[s] = 0.0;
  const auto sol = solve_window(problem_for(frames, l, anchors, mounts), GoConfig{},
                                constant_init(10, {Vec3(25, 25, 10), Vec3(25, 25, 10)}));
  for (const auto& f : sol.positions) EXPECT_NEAR((f[0] - f[1]).norm(), (mounts[0].body_offset - mounts[1].body_offset).norm(), 1e-3);
  EXPECT_LT((sol.positions[9][0] - (body + mounts[0].body_offset)).norm(), 1e-3);
}

TEST(Solver, FewAnchorsFlagLowObservabilityAndEmptyThrows) {
  const auto l = ChannelLayout::make(1, 4);
  const auto anchors = tetra_anchors(l);
  const std::vector<TagMount> mounts = {{l.tag_ids[0], Vec3::Zero()}};
  auto frames = static_frames(Vec3(30, 20, 8), l, anchors, mounts, 6);
  for (auto& f : frames) f.values[3] = 0.0;
  const auto sol = solve_window(problem_for(frames, l, anchors, mounts), GoConfig{}, constant_init(6, {Vec3(10, 10, 2)}));
  EXPECT_TRUE(sol.low_observability);
  for (auto& f : frames) std::fill(f.values.begin(), f.values.end(), 0.0);
  EXPECT_THROW(solve_window(problem_for(frames, l, anchors, mounts), GoConfig{}, constant_init(6, {Vec3(10, 10, 2)})),
               std::invalid_argument);
}

TEST(Pipeline, SlidesOverTheTrialAndHoldsThroughSilence) {
  const auto l = ChannelLayout::make(1, 4);
  Environment env;
  env.bounds = {Vec3(-1, -1, -1), Vec3(70, 60, 50)};
  env.anchors = tetra_anchors(l);
  const std::vector<TagMount> mounts = {{l.tag_ids[0], Vec3::Zero()}};
  const Vec3 truth(30, 18, 9);
  auto frames = static_frames(truth, l, env.anchors, mounts, 97);
  for (std::size_t k = 40; k < 70; ++k) std::fill(frames[k].values.begin(), frames[k].values.end(), 0.0);
  GoConfig cfg;
  const auto traj = run_go_pipeline(frames, l, env, mounts, cfg);
  ASSERT_EQ(traj.positions.size(), frames.size());
  ASSERT_EQ(traj.stamps.size(), frames.size());
  EXPECT_EQ(traj.stamps[5], frames[5].stamp);
  EXPECT_LT((traj.positions[10][0] - truth).norm(), 1e-4);
  EXPECT_LT((traj.positions[90][0] - truth).norm(), 1e-4);
  EXPECT_LT((traj.positions[55][0] - truth).norm(), 1.0);  // held through the gap
  EXPECT_THROW(run_go_pipeline({}, l, env, mounts, cfg), std::invalid_argument);
}

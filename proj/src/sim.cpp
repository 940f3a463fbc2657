#include "uwbseq/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include "uwbseq/rng.hpp"

namespace uwbseq {

bool Box::contains(const Vec3& p, double tol) const {
  return (p.array() >= lo.array() - tol).all() && (p.array() <= hi.array() + tol).all();
}

double Box::volume() const {
  const Vec3 e = (hi - lo).cwiseMax(0.0);
  return e.x() * e.y() * e.z();
}

void Environment::validate() const {
  if (anchors.empty()) throw std::invalid_argument("environment has no anchors");
  if (!(bounds.volume() > 0.0)) throw std::invalid_argument("environment bounds have zero volume");
  std::set<int> ids;
  for (const auto& a : anchors) {
    if (!ids.insert(a.anchor_id).second)
      throw std::invalid_argument("duplicate anchor id " + std::to_string(a.anchor_id));
    if (!bounds.contains(a.position, 1e-9))
      throw std::invalid_argument("anchor " + std::to_string(a.anchor_id) + " lies outside the bounds");
    if (!(a.scale > 0.0)) throw std::invalid_argument("anchor " + std::to_string(a.anchor_id) + " has scale <= 0");
  }
}

const AnchorParams& Environment::anchor(int anchor_id) const {
  for (const auto& a : anchors)
    if (a.anchor_id == anchor_id) return a;
  throw std::out_of_range("unknown anchor id " + std::to_string(anchor_id));
}

void NoiseModel::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(sigma_range >= 0.0)) throw std::invalid_argument("noise: sigma_range < 0");
  if (!prob(p_outlier) || !prob(p_detect_los) || !prob(p_detect_nlos))
    throw std::invalid_argument("noise: probability outside [0,1]");
  if (p_detect_nlos > p_detect_los) throw std::invalid_argument("noise: p_detect_nlos > p_detect_los");
  if (!(outlier_spread >= 0.0) || !(nlos_bias >= 0.0)) throw std::invalid_argument("noise: negative spread or bias");
  if (!(max_range > 0.0)) throw std::invalid_argument("noise: max_range <= 0");
}

Trajectory::Trajectory(std::vector<Pose> poses, double dt) : poses_(std::move(poses)), dt_(dt) {
  if (poses_.empty()) throw std::invalid_argument("trajectory: no poses");
  if (!(dt_ > 0.0)) throw std::invalid_argument("trajectory: dt <= 0");
  for (std::size_t i = 1; i < poses_.size(); ++i)
    if (!(poses_[i].stamp > poses_[i - 1].stamp)) throw std::invalid_argument("trajectory: stamps not increasing");
}

Pose Trajectory::at(double t) const {
  if (poses_.size() == 1 || t <= start()) return poses_.front();
  if (t >= end()) return poses_.back();
  auto it = std::upper_bound(poses_.begin(), poses_.end(), t,
                             [](double v, const Pose& p) { return v < p.stamp; });
  const Pose& b = *it;
  const Pose& a = *(it - 1);
  const double u = (t - a.stamp) / (b.stamp - a.stamp);
  Pose out;
  out.stamp = t;
  out.position = (1.0 - u) * a.position + u * b.position;
  out.orientation = a.orientation.slerp(b.orientation, u);
  return out;
}

namespace {

std::vector<Vec3> pick_waypoints(const Box& bounds, const TrajectoryConfig& cfg, std::mt19937_64& g) {
  std::vector<Vec3> wps;
  const int n = std::max(cfg.waypoint_count, 2);
  if (cfg.road_nx >= 2 && cfg.road_ny >= 2) {
    auto node = [&](int i, int j) {
      const double x = bounds.lo.x() + (bounds.hi.x() - bounds.lo.x()) * i / (cfg.road_nx - 1);
      const double y = bounds.lo.y() + (bounds.hi.y() - bounds.lo.y()) * j / (cfg.road_ny - 1);
      // Fixed gentle terrain: the same intersection has the same height in every trial.
      const double z = bounds.lo.z() + (bounds.hi.z() - bounds.lo.z()) * (0.5 + 0.5 * std::sin(1.7 * i + 2.3 * j));
      return Vec3(x, y, z);
    };
    int i = static_cast<int>(g() % static_cast<std::uint64_t>(cfg.road_nx));
    int j = static_cast<int>(g() % static_cast<std::uint64_t>(cfg.road_ny));
    int pi = -1, pj = -1;
    wps.push_back(node(i, j));
    while (static_cast<int>(wps.size()) < n) {
      std::vector<std::pair<int, int>> nbrs;
      const int di[4] = {1, -1, 0, 0};
      const int dj[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int ni = i + di[k], nj = j + dj[k];
        if (ni < 0 || nj < 0 || ni >= cfg.road_nx || nj >= cfg.road_ny) continue;
        if (ni == pi && nj == pj) continue;
        nbrs.emplace_back(ni, nj);
      }
      if (nbrs.empty()) nbrs.emplace_back(pi, pj);
      const auto pick = nbrs[g() % nbrs.size()];
      pi = i;
      pj = j;
      i = pick.first;
      j = pick.second;
      wps.push_back(node(i, j));
    }
  } else {
    for (int k = 0; k < n; ++k)
      wps.emplace_back(uniform(g, bounds.lo.x(), bounds.hi.x()), uniform(g, bounds.lo.y(), bounds.hi.y()),
                       uniform(g, bounds.lo.z(), bounds.hi.z()));
  }
  return wps;
}

// Polyline through the waypoints with each interior corner replaced by a
// quadratic Bezier arc; the arc stays inside the hull of its control points.
std::vector<Vec3> rounded_polyline(const std::vector<Vec3>& raw, double corner_radius) {
  std::vector<Vec3> wps;
  for (const auto& w : raw)
    if (wps.empty() || (w - wps.back()).norm() > 1e-9) wps.push_back(w);
  if (wps.size() < 2) return wps;

  std::vector<Vec3> out{wps.front()};
  constexpr int kArcSteps = 16;
  for (std::size_t k = 1; k + 1 < wps.size(); ++k) {
    const Vec3 in = wps[k] - wps[k - 1];
    const Vec3 outd = wps[k + 1] - wps[k];
    const double r = std::min({corner_radius, 0.5 * in.norm(), 0.5 * outd.norm()});
    const Vec3 entry = wps[k] - r * in.normalized();
    const Vec3 exit = wps[k] + r * outd.normalized();
    for (int s = 0; s <= kArcSteps; ++s) {
      const double u = static_cast<double>(s) / kArcSteps;
      out.push_back((1 - u) * (1 - u) * entry + 2 * u * (1 - u) * wps[k] + u * u * exit);
    }
  }
  out.push_back(wps.back());
  std::vector<Vec3> dedup;
  for (const auto& p : out)
    if (dedup.empty() || (p - dedup.back()).norm() > 1e-12) dedup.push_back(p);
  return dedup;
}

}  // namespace

Trajectory generate_trajectory(const Box& bounds, const TrajectoryConfig& config, std::uint64_t seed) {
  if (!(bounds.volume() > 0.0)) throw std::invalid_argument("generate_trajectory: degenerate bounds");
  if (!(config.speed > 0.0) || !(config.dt > 0.0))
    throw std::invalid_argument("generate_trajectory: speed and dt must be positive");

  auto g = named_stream(seed, "trajectory");
  const auto line = rounded_polyline(pick_waypoints(bounds, config, g), config.corner_radius);

  std::vector<double> cum(line.size(), 0.0);
  for (std::size_t i = 1; i < line.size(); ++i) cum[i] = cum[i - 1] + (line[i] - line[i - 1]).norm();
  const double total = cum.back();
  const double step = config.speed * config.dt;
  const auto n = static_cast<std::size_t>(std::floor(total / step)) + 1;

  std::vector<Pose> poses;
  poses.reserve(n);
  std::size_t seg = 0;
  double yaw = 0.0;
  bool have_yaw = false;
  for (std::size_t k = 0; k < n; ++k) {
    const double s = std::min(static_cast<double>(k) * step, total);
    while (seg + 2 < line.size() && cum[seg + 1] < s) ++seg;
    Pose p;
    p.stamp = static_cast<double>(k) * config.dt;
    if (line.size() == 1) {
      p.position = line.front();
    } else {
      const double len = cum[seg + 1] - cum[seg];
      const double u = len > 0.0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
      p.position = (1 - u) * line[seg] + u * line[seg + 1];
      const Vec3 d = line[seg + 1] - line[seg];
      if (std::hypot(d.x(), d.y()) > 1e-12) {
        yaw = std::atan2(d.y(), d.x());
        have_yaw = true;
      }
    }
    p.position = p.position.cwiseMax(bounds.lo).cwiseMin(bounds.hi);
    p.orientation = Rotation::from_yaw(have_yaw ? yaw : 0.0);
    poses.push_back(p);
  }
  if (poses.size() == 1) {
    Pose q = poses.front();
    q.stamp = config.dt;
    poses.push_back(q);
  }
  return Trajectory(std::move(poses), config.dt);
}

bool line_of_sight(const Environment& env, const Vec3& p0, const Vec3& p1) {
  const Vec3 d = p1 - p0;
  for (const auto& box : env.occluders) {
    double t0 = 0.0, t1 = 1.0;
    bool hit = true;
    for (int i = 0; i < 3 && hit; ++i) {
      if (d[i] == 0.0) {
        if (p0[i] < box.lo[i] || p0[i] > box.hi[i]) hit = false;
        continue;
      }
      double a = (box.lo[i] - p0[i]) / d[i];
      double b = (box.hi[i] - p0[i]) / d[i];
      if (a > b) std::swap(a, b);
      t0 = std::max(t0, a);
      t1 = std::min(t1, b);
      if (t0 > t1) hit = false;
    }
    if (hit) return false;
  }
  return true;
}

std::vector<MeasurementRecord> sample_measurements(const Environment& env, const Trajectory& traj,
                                                   const NoiseModel& noise, double rate_hz,
                                                   const std::vector<TagMount>& mounts, std::uint64_t seed) {
  if (!(rate_hz > 0.0)) throw std::invalid_argument("sample_measurements: rate_hz must be positive");
  noise.validate();
  const double period = 1.0 / rate_hz;
  std::vector<MeasurementRecord> log;

  for (std::size_t ti = 0; ti < mounts.size(); ++ti) {
    for (std::size_t ai = 0; ai < env.anchors.size(); ++ai) {
      const std::uint64_t pair = ti * env.anchors.size() + ai;
      auto schedule = named_stream(seed, "schedule", pair);
      auto detection = named_stream(seed, "detection", pair);
      auto ranging = named_stream(seed, "noise", pair);
      auto outliers = named_stream(seed, "outliers", pair);
      const auto& anchor = env.anchors[ai];
      const auto& mount = mounts[ti];

      double t = traj.start() + period * uniform01(schedule);
      while (t <= traj.end()) {
        const Vec3 tag = tag_world_position(traj.at(t), mount);
        const bool los = line_of_sight(env, tag, anchor.position);
        const double p_detect = los ? noise.p_detect_los : noise.p_detect_nlos;
        const bool in_range = (tag - anchor.position).norm() <= noise.max_range;
        // Every stream advances by a fixed count per ping.
        const double u_detect = uniform01(detection);
        const double n0 = gaussian(ranging);
        const double nlos_extra = exponential(ranging, 1.0) * noise.nlos_bias;
        const double u_outlier = uniform01(outliers);
        const double outlier_extra = uniform01(outliers) * noise.outlier_spread;

        if (in_range && u_detect < p_detect) {
          double r = range_model(tag, anchor) + noise.sigma_range * n0;
          if (!los) r += nlos_extra;
          if (u_outlier < noise.p_outlier) r += outlier_extra;
          log.push_back({t, mount.tag_id, anchor.anchor_id, std::max(r, 0.01)});
        }
        t += period * (1.0 + uniform(schedule, -0.1, 0.1));
      }
    }
  }
  std::sort(log.begin(), log.end(), [](const MeasurementRecord& a, const MeasurementRecord& b) {
    if (a.stamp != b.stamp) return a.stamp < b.stamp;
    if (a.tag_id != b.tag_id) return a.tag_id < b.tag_id;
    return a.anchor_id < b.anchor_id;
  });
  return log;
}

std::vector<int> visible_anchor_counts(const std::vector<MeasurementRecord>& log, double window, double step) {
  std::vector<int> counts;
  if (log.empty()) return counts;
  auto sorted = log;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.stamp < b.stamp; });
  const double t_first = sorted.front().stamp;
  const double t_last = sorted.back().stamp;
  std::size_t lo = 0;
  for (double t = t_first; t <= t_last; t += step) {
    while (lo < sorted.size() && sorted[lo].stamp < t) ++lo;
    std::set<int> seen;
    for (std::size_t i = lo; i < sorted.size() && sorted[i].stamp < t + window; ++i) seen.insert(sorted[i].anchor_id);
    counts.push_back(static_cast<int>(seen.size()));
  }
  return counts;
}

OslBiasField OslBiasField::generate(const Box& bounds, int n_bumps, double z_amplitude, double xy_bound,
                                    double min_length_scale, double max_length_scale, std::uint64_t seed) {
  auto g = named_stream(seed, "osl_bias");
  std::vector<Bump> bumps;
  double xy_sum = 0.0;
  for (int k = 0; k < n_bumps; ++k) {
    Bump b;
    b.center = Vec3(uniform(g, bounds.lo.x(), bounds.hi.x()), uniform(g, bounds.lo.y(), bounds.hi.y()),
                    uniform(g, bounds.lo.z(), bounds.hi.z()));
    b.amplitude = Vec3(uniform(g, -1, 1), uniform(g, -1, 1), uniform(g, -z_amplitude, z_amplitude));
    b.length_scale = uniform(g, min_length_scale, max_length_scale);
    xy_sum += b.amplitude.head<2>().norm();
    bumps.push_back(b);
  }
  if (xy_sum > xy_bound && xy_sum > 0.0)
    for (auto& b : bumps) b.amplitude.head<2>() *= xy_bound / xy_sum;
  return OslBiasField(std::move(bumps));
}

Vec3 OslBiasField::operator()(const Vec3& p) const {
  Vec3 out = Vec3::Zero();
  for (const auto& b : bumps_) {
    const double d2 = (p - b.center).squaredNorm();
    out += b.amplitude * std::exp(-0.5 * d2 / (b.length_scale * b.length_scale));
  }
  return out;
}

double OslBiasField::xy_bound() const {
  double s = 0.0;
  for (const auto& b : bumps_) s += b.amplitude.head<2>().norm();
  return s;
}

TagTrack::Sample TagTrack::sample(double t) const {
  if (stamps.empty()) throw std::invalid_argument("TagTrack: empty label source");
  Sample out;
  if (t <= stamps.front() || stamps.size() == 1) {
    out.clamped = t < stamps.front() || (stamps.size() == 1 && t != stamps.front());
    out.positions = positions.front();
    return out;
  }
  if (t >= stamps.back()) {
    out.clamped = t > stamps.back();
    out.positions = positions.back();
    return out;
  }
  const auto it = std::upper_bound(stamps.begin(), stamps.end(), t);
  const auto k = static_cast<std::size_t>(it - stamps.begin());
  const double u = (t - stamps[k - 1]) / (stamps[k] - stamps[k - 1]);
  out.positions.resize(positions[k].size());
  for (std::size_t i = 0; i < out.positions.size(); ++i)
    out.positions[i] = (1.0 - u) * positions[k - 1][i] + u * positions[k][i];
  return out;
}

TagTrack osl_labels(const Trajectory& traj, const OslBiasField& field, const std::vector<TagMount>& mounts) {
  TagTrack track;
  track.stamps.reserve(traj.poses().size());
  track.positions.reserve(traj.poses().size());
  for (const auto& pose : traj.poses()) {
    track.stamps.push_back(pose.stamp);
    std::vector<Vec3> tags;
    tags.reserve(mounts.size());
    for (const auto& m : mounts) {
      const Vec3 p = tag_world_position(pose, m);
      tags.push_back(p + field(p));
    }
    track.positions.push_back(std::move(tags));
  }
  return track;
}

TagTrack ground_truth_labels(const Trajectory& traj, const std::vector<TagMount>& mounts) {
  return osl_labels(traj, OslBiasField(), mounts);
}

Box vehicle_region(const CampusConfig& config) {
  Box b = config.bounds;
  b.lo.z() = config.vehicle_z_min;
  b.hi.z() = config.vehicle_z_max;
  return b;
}

Environment make_campus_environment(const CampusConfig& config, std::uint64_t seed) {
  auto g = named_stream(seed, "environment");
  Environment env;
  env.bounds = config.bounds;
  const Box& b = config.bounds;
  const double dx = (b.hi.x() - b.lo.x()) / std::max(config.road_nx - 1, 1);
  const double dy = (b.hi.y() - b.lo.y()) / std::max(config.road_ny - 1, 1);

  // Buildings: each block between roads is split into slabs separated by alleys.
  const int nb = std::max(config.buildings_per_block, 1);
  for (int i = 0; i + 1 < config.road_nx; ++i) {
    for (int j = 0; j + 1 < config.road_ny; ++j) {
      const double x0 = b.lo.x() + i * dx + config.building_margin;
      const double x1 = b.lo.x() + (i + 1) * dx - config.building_margin;
      const double y0 = b.lo.y() + j * dy + config.building_margin;
      const double y1 = b.lo.y() + (j + 1) * dy - config.building_margin;
      if (x1 <= x0 || y1 <= y0) continue;
      const double wx = (x1 - x0 - (nb - 1) * config.alley_width) / nb;
      const double wy = (y1 - y0 - (nb - 1) * config.alley_width) / nb;
      for (int u = 0; u < nb; ++u) {
        for (int v = 0; v < nb; ++v) {
          const double h = config.building_height * uniform(g, 0.6, 1.0);
          Box occ;
          occ.lo = Vec3(x0 + u * (wx + config.alley_width), y0 + v * (wy + config.alley_width), b.lo.z());
          occ.hi = Vec3(occ.lo.x() + wx, occ.lo.y() + wy, std::min(b.lo.z() + h, b.hi.z()));
          env.occluders.push_back(occ);
        }
      }
    }
  }

  // Anchors along roads, offset a few meters to the roadside.
  for (int k = 0; k < config.n_anchors; ++k) {
    AnchorParams a;
    a.anchor_id = k;
    const bool along_x = (g() & 1ULL) != 0;
    Vec3 p;
    if (along_x) {
      const int j = static_cast<int>(g() % static_cast<std::uint64_t>(config.road_ny));
      p = Vec3(uniform(g, b.lo.x(), b.hi.x()), b.lo.y() + j * dy, 0.0);
      p.y() += (j + 1 < config.road_ny ? 1.0 : -1.0) * 3.0;
    } else {
      const int i = static_cast<int>(g() % static_cast<std::uint64_t>(config.road_nx));
      p = Vec3(b.lo.x() + i * dx, uniform(g, b.lo.y(), b.hi.y()), 0.0);
      p.x() += (i + 1 < config.road_nx ? 1.0 : -1.0) * 3.0;
    }
    p.z() = uniform(g, config.anchor_height_min, config.anchor_height_max);
    a.position = p.cwiseMax(b.lo).cwiseMin(b.hi);
    a.scale = 1.0 + uniform(g, -config.scale_spread, config.scale_spread);
    a.bias = uniform(g, config.bias_min, config.bias_max);
    env.anchors.push_back(a);
  }
  env.validate();
  return env;
}

}  // namespace uwbseq

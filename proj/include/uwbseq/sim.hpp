#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "uwbseq/geometry.hpp"

namespace uwbseq {

struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  bool contains(const Vec3& p, double tol = 0.0) const;
  double volume() const;
  Vec3 center() const { return 0.5 * (lo + hi); }
};

struct Environment {
  Box bounds;
  std::vector<AnchorParams> anchors;
  std::vector<Box> occluders;

  // Throws std::invalid_argument on an empty anchor list, an anchor outside
  // the bounds, a non-positive scale or a duplicated anchor id.
  void validate() const;
  const AnchorParams& anchor(int anchor_id) const;
};

struct NoiseModel {
  double sigma_range = 0.1;
  double p_outlier = 0.02;
  double outlier_spread = 20.0;
  double nlos_bias = 2.0;
  double p_detect_los = 0.95;
  double p_detect_nlos = 0.3;
  // Pings beyond this distance are never detected.
  double max_range = std::numeric_limits<double>::infinity();

  void validate() const;
};

struct TrajectoryConfig {
  int waypoint_count = 8;
  double speed = 5.0;
  double dt = 0.01;
  double corner_radius = 6.0;
  // When both are >= 2 the waypoints are a random walk over a road grid of
  // road_nx by road_ny intersections spanning the bounds; otherwise they are
  // drawn uniformly inside the bounds.
  int road_nx = 0;
  int road_ny = 0;
};

class Trajectory {
public:
  Trajectory() = default;
  Trajectory(std::vector<Pose> poses, double dt);

  const std::vector<Pose>& poses() const { return poses_; }
  double dt() const { return dt_; }
  double start() const { return poses_.front().stamp; }
  double end() const { return poses_.back().stamp; }
  bool empty() const { return poses_.empty(); }

  // Linear position / spherical orientation interpolation, clamped to the span.
  Pose at(double t) const;

private:
  std::vector<Pose> poses_;
  double dt_ = 0.0;
};

Trajectory generate_trajectory(const Box& bounds, const TrajectoryConfig& config, std::uint64_t seed);

// Boxes are closed sets: a segment that only touches a face, edge or corner
// counts as blocked.
bool line_of_sight(const Environment& env, const Vec3& p0, const Vec3& p1);

struct MeasurementRecord {
  double stamp = 0.0;
  int tag_id = 0;
  int anchor_id = 0;
  double range = 0.0;
};

std::vector<MeasurementRecord> sample_measurements(const Environment& env, const Trajectory& traj,
                                                   const NoiseModel& noise, double rate_hz,
                                                   const std::vector<TagMount>& mounts, std::uint64_t seed);

// Number of distinct anchors heard (by any tag) in each [t, t + window) for t
// stepping by `step` from the first stamp.
std::vector<int> visible_anchor_counts(const std::vector<MeasurementRecord>& log, double window = 1.0,
                                       double step = 0.5);

class OslBiasField {
public:
  struct Bump {
    Vec3 center;
    Vec3 amplitude;
    double length_scale;
  };

  OslBiasField() = default;
  explicit OslBiasField(std::vector<Bump> bumps) : bumps_(std::move(bumps)) {}

  // Gaussian bumps centered inside `bounds`; z amplitudes in [-z_amplitude, z_amplitude],
  // xy amplitudes rescaled so their norms sum to at most xy_bound.
  static OslBiasField generate(const Box& bounds, int n_bumps, double z_amplitude, double xy_bound,
                               double min_length_scale, double max_length_scale, std::uint64_t seed);

  Vec3 operator()(const Vec3& p) const;
  const std::vector<Bump>& bumps() const { return bumps_; }
  // Upper bound on the xy magnitude anywhere.
  double xy_bound() const;

private:
  std::vector<Bump> bumps_;
};

// Tag positions over time: positions[k][i] is tag i at stamps[k].
struct TagTrack {
  std::vector<double> stamps;
  std::vector<std::vector<Vec3>> positions;

  std::size_t n_tags() const { return positions.empty() ? 0 : positions.front().size(); }
  bool empty() const { return stamps.empty(); }

  struct Sample {
    std::vector<Vec3> positions;
    bool clamped = false;
  };
  // Linear interpolation; stamps outside the span are clamped and flagged.
  Sample sample(double t) const;
};

TagTrack osl_labels(const Trajectory& traj, const OslBiasField& field, const std::vector<TagMount>& mounts);
TagTrack ground_truth_labels(const Trajectory& traj, const std::vector<TagMount>& mounts);

// Road-grid campus: buildings fill the blocks between roads, anchors sit on
// the roadside at mast height.
struct CampusConfig {
  Box bounds{Vec3(0, 0, 0), Vec3(400, 200, 20)};
  int road_nx = 5;
  int road_ny = 3;
  int n_anchors = 10;
  double anchor_height_min = 2.5;
  double anchor_height_max = 4.5;
  double building_margin = 10.0;
  double building_height = 15.0;
  // Buildings are split into this many slabs per block axis, leaving alleys.
  int buildings_per_block = 2;
  double alley_width = 6.0;
  double scale_spread = 0.01;
  double bias_min = -0.2;
  double bias_max = 0.3;
  double vehicle_z_min = 0.8;
  double vehicle_z_max = 1.6;
};

Environment make_campus_environment(const CampusConfig& config, std::uint64_t seed);
// Region the vehicle drives in (bounds with the vehicle height range).
Box vehicle_region(const CampusConfig& config);

struct Trial {
  int trial_id = 0;
  Environment env;
  std::vector<TagMount> mounts;
  std::vector<MeasurementRecord> log;
  TagTrack ground_truth;
  TagTrack osl;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

// Directory layout: meas.csv (stamp,tag_id,anchor_id,range), gt.csv and
// osl.csv (stamp,x0,y0,z0[,x1,y1,z1...]), env.json. Numbers use 9 significant digits.
void write_trial(const Trial& trial, const std::filesystem::path& dir);
Trial read_trial(const std::filesystem::path& dir);

}  // namespace uwbseq

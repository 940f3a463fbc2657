#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace uwbseq {

using Vec3 = Eigen::Vector3d;

// Unit quaternion, normalized on construction.
class Rotation {
public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}
  explicit Rotation(const Eigen::Quaterniond& q);

  static Rotation identity() { return Rotation(); }
  static Rotation from_yaw(double yaw);
  static Rotation from_axis_angle(const Vec3& axis, double angle);

  const Eigen::Quaterniond& quaternion() const { return q_; }
  Eigen::Matrix3d matrix() const { return q_.toRotationMatrix(); }
  double yaw() const;

  Vec3 operator*(const Vec3& v) const { return q_ * v; }
  Rotation operator*(const Rotation& other) const { return Rotation(q_ * other.q_); }
  Rotation inverse() const { return Rotation(q_.conjugate()); }

  // Spherical interpolation, t in [0,1].
  Rotation slerp(const Rotation& other, double t) const { return Rotation(q_.slerp(t, other.q_)); }

private:
  Eigen::Quaterniond q_;
};

struct Pose {
  Vec3 position = Vec3::Zero();
  Rotation orientation;
  double stamp = 0.0;
};

struct TagMount {
  int tag_id = 0;
  Vec3 body_offset = Vec3::Zero();
};

struct AnchorParams {
  int anchor_id = 0;
  Vec3 position = Vec3::Zero();
  double scale = 1.0;
  double bias = 0.0;
};

Vec3 tag_world_position(const Pose& pose, const TagMount& mount);

// d = scale * |p + R b - a| + bias
double range_model(const Pose& pose, const TagMount& mount, const AnchorParams& anchor);

// Same model evaluated at an already-resolved tag position.
double range_model(const Vec3& tag_position, const AnchorParams& anchor);

}  // namespace uwbseq

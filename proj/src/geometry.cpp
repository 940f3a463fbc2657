#include "uwbseq/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace uwbseq {

Rotation::Rotation(const Eigen::Quaterniond& q) : q_(q) {
  const double n = q_.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("Rotation: degenerate quaternion");
  q_.coeffs() /= n;
}

Rotation Rotation::from_yaw(double yaw) {
  return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vec3::UnitZ())));
}

Rotation Rotation::from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0)) throw std::invalid_argument("Rotation: zero rotation axis");
  return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis / n)));
}

double Rotation::yaw() const {
  const Eigen::Matrix3d r = matrix();
  return std::atan2(r(1, 0), r(0, 0));
}

Vec3 tag_world_position(const Pose& pose, const TagMount& mount) {
  return pose.position + pose.orientation * mount.body_offset;
}

double range_model(const Vec3& tag_position, const AnchorParams& anchor) {
  return anchor.scale * (tag_position - anchor.position).norm() + anchor.bias;
}

double range_model(const Pose& pose, const TagMount& mount, const AnchorParams& anchor) {
  return range_model(tag_world_position(pose, mount), anchor);
}

}  // namespace uwbseq

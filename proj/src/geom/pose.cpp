#include "coopbev/geom/pose.hpp"

namespace coopbev::geom {

double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

Vec2 apply_pose(const Pose2& t, Vec2 p) {
  const double c = std::cos(t.yaw), s = std::sin(t.yaw);
  return {c * p.x - s * p.y + t.x, s * p.x + c * p.y + t.y};
}

Pose2 relative_transform(const Pose2& receiver, const Pose2& sender) {
  const double dyaw = wrap_angle(receiver.yaw - sender.yaw);
  const double dx = receiver.x - sender.x;
  const double dy = receiver.y - sender.y;
  const double c = std::cos(sender.yaw), s = std::sin(sender.yaw);
  // Rotate the world-frame offset into the sender's frame.
  return {c * dx + s * dy, -s * dx + c * dy, dyaw};
}

}  // namespace coopbev::geom

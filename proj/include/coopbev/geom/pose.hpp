#pragma once

#include <cmath>

namespace coopbev::geom {

// Wraps to (-pi, pi].
double wrap_angle(double a);

// Planar pose: the rigid transform taking agent-frame points to world-frame.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

Vec2 apply_pose(const Pose2& t, Vec2 p);

// Transform taking receiver-frame points into the sender's frame.
Pose2 relative_transform(const Pose2& receiver, const Pose2& sender);

// Square-cell BEV raster centered on the agent, +x forward along rows.
// Cell (i,j) covers the point ((i+0.5-h/2)*res, (j+0.5-w/2)*res).
struct BevGrid {
  int h = 0;
  int w = 0;
  double res = 1.0;  // meters per cell

  Vec2 cell_center(int i, int j) const {
    return {(i + 0.5 - 0.5 * h) * res, (j + 0.5 - 0.5 * w) * res};
  }
  // Continuous cell coordinates of a metric point (u along rows, v along cols).
  Vec2 cell_coords(Vec2 p) const {
    return {p.x / res - 0.5 + 0.5 * h, p.y / res - 0.5 + 0.5 * w};
  }
  double extent_x() const { return h * res; }
  double extent_y() const { return w * res; }
};

}  // namespace coopbev::geom

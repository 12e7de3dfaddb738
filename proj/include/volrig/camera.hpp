#pragma once

#include "volrig/kinematics.hpp"
#include "volrig/types.hpp"

namespace volrig {

/// Pinhole camera: world-to-camera extrinsic (x_cam = R x_world + t) plus
/// focal lengths and principal point in pixels. Camera space looks down +z.
struct Camera {
  RigidTransform extrinsic;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
  Vec3 center() const;  // camera position in world space
};

/// Camera at `eye` looking at `target`. The up vector defaults to +z and is
/// nudged to +x when the view direction is degenerate with it.
Camera look_at_camera(const Vec3& eye, const Vec3& target, double fx, double fy,
                      int width, int height);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double near = 0.0;
  double far = 0.0;
  bool hit = false;  // false: the ray misses the volume box, do not march
};

/// Ray through the center of pixel (px, py), clipped against the world box
/// [box_lo, box_hi]. An empty intersection yields hit = false.
Ray generate_ray(const Camera& cam, int px, int py, const Vec3& box_lo,
                 const Vec3& box_hi);

}  // namespace volrig

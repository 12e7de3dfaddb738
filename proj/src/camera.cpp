#include "volrig/camera.hpp"

#include <algorithm>
#include <cmath>

namespace volrig {

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw ConfigError("camera focal lengths must be positive");
  if (width < 1 || height < 1)
    throw ConfigError("camera image dimensions must be at least 1");
}

Vec3 Camera::center() const {
  return -(extrinsic.rotation.transpose() * extrinsic.translation);
}

Camera look_at_camera(const Vec3& eye, const Vec3& target, double fx,
                      double fy, int width, int height) {
  Camera cam;
  const Vec3 forward = (target - eye).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(forward.dot(up)) > 0.999) up = Vec3::UnitX();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);  // pixel y grows downward
  cam.extrinsic.rotation.row(0) = right;
  cam.extrinsic.rotation.row(1) = down;
  cam.extrinsic.rotation.row(2) = forward;
  cam.extrinsic.translation = -(cam.extrinsic.rotation * eye);
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.width = width;
  cam.height = height;
  cam.validate();
  return cam;
}

Ray generate_ray(const Camera& cam, int px, int py, const Vec3& box_lo,
                 const Vec3& box_hi) {
  Ray ray;
  const Vec3 dir_cam((px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy,
                     1.0);
  ray.direction = (cam.extrinsic.rotation.transpose() * dir_cam).normalized();
  ray.origin = cam.center();
  // Slab intersection with the volume box.
  double t_enter = 0.0;
  double t_exit = std::numeric_limits<double>::max();
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction[a];
    if (std::abs(d) < 1e-15) {
      if (ray.origin[a] < box_lo[a] || ray.origin[a] > box_hi[a]) return ray;
      continue;
    }
    double t0 = (box_lo[a] - ray.origin[a]) / d;
    double t1 = (box_hi[a] - ray.origin[a]) / d;
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (t_exit <= t_enter) return ray;
  ray.near = t_enter;
  ray.far = t_exit;
  ray.hit = true;
  return ray;
}

}  // namespace volrig

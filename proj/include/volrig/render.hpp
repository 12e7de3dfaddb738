#pragma once

#include <algorithm>
#include <vector>

#include "volrig/camera.hpp"
#include "volrig/deform.hpp"

namespace volrig {

struct RenderOptions {
  double step = 0.0;      // 0: half the canonical voxel edge
  double step_ref = 0.0;  // 0: one canonical voxel edge
  bool early_stop = true; // differentiable mode turns this off
  int threads = 0;        // 0: hardware default

  /// Fills the zero step fields from the view's canonical grid.
  RenderOptions resolved(const PosedVolumeView& view) const;
};

/// Premultiplied color and alpha images, row-major, y = 0 at the top.
struct RenderedImage {
  int width = 0, height = 0;
  std::vector<double> rgb;    // width*height*3
  std::vector<double> alpha;  // width*height
};

struct MarchResult {
  Vec3 rgb = Vec3::Zero();
  double alpha = 0.0;
};

/// Front-to-back compositing along one ray. Samples sit at segment
/// midpoints near + (m+0.5)*step; per-sample opacity is
/// clamp(alpha * step/step_ref, 0, 1); marching stops once the
/// accumulated alpha reaches 1 - 1e-4 (unless early_stop is off) or the
/// far bound is passed. The emit callback sees every sample in order with
/// the transmittance before the sample; the forward-only path passes a
/// no-op so both paths run the identical accumulation sequence.
template <class Emit>
MarchResult march_ray_emit(const PosedVolumeView& view, const Ray& ray,
                           double step, double step_ref, bool early_stop,
                           Emit&& emit) {
  MarchResult out;
  if (!ray.hit || !(step > 0.0)) return out;
  const double opacity_scale = step / step_ref;
  double transmit = 1.0;
  Vec3 color = Vec3::Zero();
  for (int m = 0;; ++m) {
    const double t = ray.near + (m + 0.5) * step;
    if (t >= ray.far) break;
    const Vec3 x = ray.origin + t * ray.direction;
    const std::array<double, 4> s = sample_target(view, x);
    const double a = std::clamp(s[3] * opacity_scale, 0.0, 1.0);
    emit(x, s, a, transmit);
    color += (transmit * a) * Vec3(s[0], s[1], s[2]);
    transmit *= 1.0 - a;
    if (early_stop && transmit <= 1e-4) break;
  }
  out.rgb = color;
  out.alpha = 1.0 - transmit;
  return out;
}

MarchResult march_ray(const PosedVolumeView& view, const Ray& ray, double step,
                      double step_ref, bool early_stop = true);

/// Renders every pixel with march_ray. Deterministic for fixed inputs
/// regardless of the worker count (each pixel is independent).
RenderedImage render_image(const PosedVolumeView& view, const Camera& cam,
                           const RenderOptions& opts = {});

/// out = I + (1 - alpha) * bg, with I premultiplied by construction.
std::vector<double> composite(const RenderedImage& img, const Vec3& bg);
std::vector<double> composite(const RenderedImage& img,
                              const std::vector<double>& bg_rgb, int bg_width,
                              int bg_height);

}  // namespace volrig

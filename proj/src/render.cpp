#include "volrig/render.hpp"

#include "volrig/parallel.hpp"

namespace volrig {

RenderOptions RenderOptions::resolved(const PosedVolumeView& view) const {
  RenderOptions r = *this;
  const double edge = view.canonical().box.min_voxel_edge();
  if (!(r.step_ref > 0.0)) r.step_ref = edge;
  if (!(r.step > 0.0)) r.step = 0.5 * edge;
  if (r.threads <= 0) r.threads = default_thread_count();
  return r;
}

MarchResult march_ray(const PosedVolumeView& view, const Ray& ray, double step,
                      double step_ref, bool early_stop) {
  return march_ray_emit(view, ray, step, step_ref, early_stop,
                        [](const Vec3&, const std::array<double, 4>&, double,
                           double) {});
}

RenderedImage render_image(const PosedVolumeView& view, const Camera& cam,
                           const RenderOptions& opts) {
  cam.validate();
  const RenderOptions o = opts.resolved(view);
  RenderedImage img;
  img.width = cam.width;
  img.height = cam.height;
  img.rgb.assign(static_cast<std::size_t>(cam.width) * cam.height * 3, 0.0);
  img.alpha.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0);

  run_blocks(cam.height, o.threads, [&](int py) {
    for (int px = 0; px < cam.width; ++px) {
      const Ray ray = generate_ray(cam, px, py, view.march_min(), view.march_max());
      const MarchResult r =
          march_ray(view, ray, o.step, o.step_ref, o.early_stop);
      const std::size_t p = static_cast<std::size_t>(py) * cam.width + px;
      img.rgb[p * 3 + 0] = r.rgb.x();
      img.rgb[p * 3 + 1] = r.rgb.y();
      img.rgb[p * 3 + 2] = r.rgb.z();
      img.alpha[p] = r.alpha;
    }
  });
  return img;
}

std::vector<double> composite(const RenderedImage& img, const Vec3& bg) {
  std::vector<double> out(img.rgb.size());
  const std::size_t n = img.alpha.size();
  for (std::size_t p = 0; p < n; ++p) {
    const double t = 1.0 - img.alpha[p];
    for (int c = 0; c < 3; ++c) out[p * 3 + c] = img.rgb[p * 3 + c] + t * bg[c];
  }
  return out;
}

std::vector<double> composite(const RenderedImage& img,
                              const std::vector<double>& bg_rgb, int bg_width,
                              int bg_height) {
  if (bg_width != img.width || bg_height != img.height ||
      bg_rgb.size() != img.rgb.size())
    throw ConfigError("background image dimensions do not match the render");
  std::vector<double> out(img.rgb.size());
  const std::size_t n = img.alpha.size();
  for (std::size_t p = 0; p < n; ++p) {
    const double t = 1.0 - img.alpha[p];
    for (int c = 0; c < 3; ++c)
      out[p * 3 + c] = img.rgb[p * 3 + c] + t * bg_rgb[p * 3 + c];
  }
  return out;
}

}  // namespace volrig

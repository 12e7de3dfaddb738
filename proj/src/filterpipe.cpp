#include "volrig/filterpipe.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace fs = std::filesystem;

namespace volrig {

namespace {
bool on(double v) { return v > 0.5; }
}  // namespace

double silhouette_coverage(const Image& person_mask, const Image& smpl_sil) {
  if (person_mask.width != smpl_sil.width ||
      person_mask.height != smpl_sil.height)
    throw ConfigError("mask dimensions do not match");
  if (person_mask.channels != 1 || smpl_sil.channels != 1)
    throw ConfigError("masks must be single-channel");
  std::int64_t sil = 0, both = 0;
  for (std::size_t i = 0; i < smpl_sil.data.size(); ++i) {
    if (!on(smpl_sil.data[i])) continue;
    ++sil;
    if (on(person_mask.data[i])) ++both;
  }
  if (sil == 0) throw ConfigError("empty silhouette");
  return static_cast<double>(both) / static_cast<double>(sil);
}

bool pose_consistency(const std::vector<std::array<double, 2>>& projected3d,
                      const std::vector<Keypoint>& keypoints2d,
                      const BBox& bbox, double tau, double confidence_floor) {
  if (projected3d.size() != keypoints2d.size())
    throw ConfigError("keypoint lists are not index-aligned");
  const double diag = bbox.diagonal();
  if (!(diag > 0.0)) throw ConfigError("degenerate bbox");
  double total = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < keypoints2d.size(); ++i) {
    if (keypoints2d[i].confidence < confidence_floor) continue;
    const double dx = keypoints2d[i].x - projected3d[i][0];
    const double dy = keypoints2d[i].y - projected3d[i][1];
    total += std::sqrt(dx * dx + dy * dy);
    ++used;
  }
  if (used == 0) throw ConfigError("no confident keypoints");
  return total / used / diag <= tau;
}

bool full_body_check(const std::vector<Keypoint>& keypoints2d,
                     const FilterConfig& cfg) {
  auto present = [&](int idx) {
    return idx >= 0 && idx < static_cast<int>(keypoints2d.size()) &&
           keypoints2d[idx].confidence >= cfg.confidence_floor;
  };
  return present(cfg.wrist_indices[0]) && present(cfg.wrist_indices[1]) &&
         present(cfg.ankle_indices[0]) && present(cfg.ankle_indices[1]);
}

Camera CropResult::apply_to_camera(const Camera& cam) const {
  Camera out = cam;
  out.fx = cam.fx * scale;
  out.fy = cam.fy * scale;
  out.cx = cam.cx * scale + offset_x;
  out.cy = cam.cy * scale + offset_y;
  out.width = image.width;
  out.height = image.height;
  return out;
}

CropResult normalize_crop(const Image& image, const Image& mask,
                          const BBox& bbox) {
  if (!(bbox.longer_side() > 0.0)) throw ConfigError("degenerate bbox");
  if (image.width != mask.width || image.height != mask.height)
    throw ConfigError("image and mask dimensions do not match");
  constexpr int kOut = 512;
  constexpr double kTargetSide = 400.0;

  CropResult res;
  res.scale = kTargetSide / bbox.longer_side();
  res.offset_x = 0.5 * kOut - res.scale * bbox.center_x();
  res.offset_y = 0.5 * kOut - res.scale * bbox.center_y();
  res.image = Image(kOut, kOut, image.channels);
  res.mask = Image(kOut, kOut, 1);

  auto bilinear = [&](double sx, double sy, int c) {
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const double fx = sx - x0, fy = sy - y0;
    double v = 0.0;
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const int x = x0 + dx, y = y0 + dy;
        if (x < 0 || y < 0 || x >= image.width || y >= image.height) continue;
        v += (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * image.at(x, y, c);
      }
    return v;
  };

  for (int y = 0; y < kOut; ++y)
    for (int x = 0; x < kOut; ++x) {
      // Source position of this output pixel center.
      const double sx = (x + 0.5 - res.offset_x) / res.scale - 0.5;
      const double sy = (y + 0.5 - res.offset_y) / res.scale - 0.5;
      for (int c = 0; c < image.channels; ++c)
        res.image.at(x, y, c) = bilinear(sx, sy, c);
      const int nx = static_cast<int>(std::lround(sx));
      const int ny = static_cast<int>(std::lround(sy));
      if (nx >= 0 && ny >= 0 && nx < mask.width && ny < mask.height)
        res.mask.at(x, y) = on(mask.at(nx, ny)) ? 1.0 : 0.0;
    }
  return res;
}

std::vector<std::string> FilterReport::report_lines() const {
  std::vector<std::string> lines;
  lines.reserve(decisions.size());
  for (const FilterDecision& d : decisions)
    lines.push_back(d.frame_id + "," + d.reason + "," +
                    (d.kept ? "kept" : "dropped"));
  return lines;
}

FilterReport filter_dataset(const std::vector<FilterInput>& frames,
                            const FilterConfig& cfg) {
  FilterReport report;
  for (const FilterInput& f : frames) {
    FilterDecision d;
    d.frame_id = f.frame_id;
    if (f.missing) {
      d.reason = "missing";
      ++report.dropped_missing;
      report.decisions.push_back(d);
      continue;
    }
    try {
      if (!full_body_check(f.ann.keypoints2d, cfg)) {
        d.reason = "full_body";
        ++report.dropped_full_body;
      } else if (!pose_consistency(f.ann.projected3d, f.ann.keypoints2d,
                                   f.ann.bbox, cfg.consistency_tau,
                                   cfg.confidence_floor)) {
        d.reason = "pose_consistency";
        ++report.dropped_pose;
      } else if (silhouette_coverage(f.ann.person_mask, f.ann.smpl_sil) <
                 cfg.coverage_threshold) {
        d.reason = "silhouette";
        ++report.dropped_silhouette;
      } else {
        d.kept = true;
        ++report.kept;
      }
    } catch (const ConfigError&) {
      d.reason = "invalid";
      ++report.dropped_invalid;
    }
    report.decisions.push_back(d);
  }
  return report;
}

FrameAnnotations annotations_from_json(const Json& j,
                                       const std::string& base_dir) {
  FrameAnnotations ann;
  for (const auto& kp : j.at("keypoints2d")) {
    const auto v = kp.get<std::vector<double>>();
    if (v.size() != 3)
      throw ConfigError("keypoints2d entries must be [x, y, confidence]");
    ann.keypoints2d.push_back({v[0], v[1], v[2]});
  }
  for (const auto& kp : j.at("projected3d")) {
    const auto v = kp.get<std::vector<double>>();
    if (v.size() != 2)
      throw ConfigError("projected3d entries must be [x, y]");
    ann.projected3d.push_back({v[0], v[1]});
  }
  const auto bb = j.at("bbox").get<std::vector<double>>();
  if (bb.size() != 4) throw ConfigError("bbox must be [x0, y0, x1, y1]");
  ann.bbox = {bb[0], bb[1], bb[2], bb[3]};
  ann.person_mask =
      read_png((fs::path(base_dir) / j.at("person_mask").get<std::string>())
                   .string());
  ann.smpl_sil = read_png(
      (fs::path(base_dir) / j.at("smpl_sil").get<std::string>()).string());
  return ann;
}

Json annotations_to_json(const FrameAnnotations& ann,
                         const std::string& person_mask_path,
                         const std::string& smpl_sil_path) {
  Json kp = Json::array();
  for (const Keypoint& k : ann.keypoints2d)
    kp.push_back({k.x, k.y, k.confidence});
  Json proj = Json::array();
  for (const auto& p : ann.projected3d) proj.push_back({p[0], p[1]});
  return Json{{"keypoints2d", kp},
              {"projected3d", proj},
              {"bbox", {ann.bbox.x0, ann.bbox.y0, ann.bbox.x1, ann.bbox.y1}},
              {"person_mask", person_mask_path},
              {"smpl_sil", smpl_sil_path}};
}

}  // namespace volrig

#pragma once

#include <array>
#include <string>
#include <vector>

#include "volrig/camera.hpp"
#include "volrig/image.hpp"
#include "volrig/serialization.hpp"

namespace volrig {

struct Keypoint {
  double x = 0.0, y = 0.0, confidence = 0.0;
};

struct BBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double longer_side() const { return std::max(width(), height()); }
  double diagonal() const {
    return std::sqrt(width() * width() + height() * height());
  }
  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
};

/// Precomputed per-frame estimator outputs this module consumes; it never
/// runs a pose or segmentation model itself.
struct FrameAnnotations {
  Image person_mask;  // binary
  Image smpl_sil;     // binary silhouette of the posed body model
  std::vector<Keypoint> keypoints2d;
  std::vector<std::array<double, 2>> projected3d;  // index-aligned with 2D
  BBox bbox;
};

struct FilterConfig {
  double coverage_threshold = 0.95;
  double consistency_tau = 0.05;
  double confidence_floor = 0.3;
  // COCO-17 indices by default.
  std::array<int, 2> wrist_indices = {9, 10};
  std::array<int, 2> ankle_indices = {15, 16};
};

/// |I_pm intersect I_sil| / |I_sil|. Throws ConfigError on an empty
/// silhouette (an invalid frame, distinct from low coverage).
double silhouette_coverage(const Image& person_mask, const Image& smpl_sil);

/// Mean distance between confident 2D keypoints and the projected 3D pose,
/// normalized by the bbox diagonal, compared against tau. Throws
/// ConfigError when no keypoint clears the confidence floor.
bool pose_consistency(const std::vector<std::array<double, 2>>& projected3d,
                      const std::vector<Keypoint>& keypoints2d,
                      const BBox& bbox, double tau = 0.05,
                      double confidence_floor = 0.3);

/// True iff both wrists and both ankles are detected at or above the
/// confidence floor.
bool full_body_check(const std::vector<Keypoint>& keypoints2d,
                     const FilterConfig& cfg = {});

struct CropResult {
  Image image;  // 512 x 512
  Image mask;   // 512 x 512
  double scale = 1.0;
  double offset_x = 0.0, offset_y = 0.0;  // out = scale * src + offset

  /// The same similarity transform applied to pinhole intrinsics.
  Camera apply_to_camera(const Camera& cam) const;
};

/// Uniform rescale so the bbox's longer side is 400 px with its center at
/// (256, 256) in a 512x512 output; out-of-source pixels are black / zero.
CropResult normalize_crop(const Image& image, const Image& mask,
                          const BBox& bbox);

struct FilterInput {
  std::string frame_id;
  bool missing = false;  // annotation files could not be loaded
  FrameAnnotations ann;
};

struct FilterDecision {
  std::string frame_id;
  bool kept = false;
  std::string reason;  // empty | missing | invalid | full_body |
                       // pose_consistency | silhouette
};

struct FilterReport {
  std::vector<FilterDecision> decisions;
  int kept = 0;
  int dropped_missing = 0;
  int dropped_invalid = 0;
  int dropped_full_body = 0;
  int dropped_pose = 0;
  int dropped_silhouette = 0;

  std::vector<std::string> report_lines() const;  // "frame,rule,kept|dropped"
};

/// Applies the three filter rules in order (full-body, pose consistency,
/// silhouette coverage); missing annotations drop the frame outright.
FilterReport filter_dataset(const std::vector<FilterInput>& frames,
                            const FilterConfig& cfg = {});

/// Parses a per-frame annotation record; mask paths are resolved against
/// base_dir and loaded.
FrameAnnotations annotations_from_json(const Json& j,
                                       const std::string& base_dir);
Json annotations_to_json(const FrameAnnotations& ann,
                         const std::string& person_mask_path,
                         const std::string& smpl_sil_path);

}  // namespace volrig

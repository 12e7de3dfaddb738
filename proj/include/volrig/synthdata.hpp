#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "volrig/render.hpp"
#include "volrig/serialization.hpp"
#include "volrig/weights.hpp"

namespace volrig {

/// Procedural articulated character: one colored capsule per bone.
/// Stands in for a scanned model and doubles as the ground-truth oracle,
/// since its weight volume is exactly one-hot.
struct FigureSpec {
  Skeleton skel;
  std::vector<double> capsule_radius;  // per bone, world units
  std::vector<Vec3> colors;            // per bone base RGB in [0,1]
  double alpha = 1.0;

  void validate() const;
};

/// Reads a skeleton config, filling capsule radii (default: sigma_r) and
/// colors (default: a fixed palette) when the file omits them.
FigureSpec figure_from_json(const Json& j);

struct FigureVolumes {
  VoxelGrid canonical;  // activated RGBA, alpha 1 inside the capsules
  VoxelGrid weights;    // K+1 channels, exactly one-hot everywhere
};

/// Rasterizes the figure in the canonical pose. Voxels inside a capsule get
/// the nearest bone (ties to the lower index), that bone's axis-graded
/// color and a one-hot weight; all other voxels are background.
FigureVolumes make_figure(const FigureSpec& spec, const Pose& canonical,
                          const GridBox& canonical_box,
                          const GridBox& weight_box);

/// Converts the figure into checkpoint parameters: pre-softplus colors and
/// weight logits that reproduce the one-hot assignment under the prior.
std::pair<VoxelGrid, VoxelGrid> figure_to_params(const FigureVolumes& figure,
                                                 const VoxelGrid& prior);

/// n camera centers on a sphere of the given radius looking at the origin
/// (Fibonacci lattice; n = 2 falls back to the poles so the two views are
/// antipodal). Intrinsics default to fx = fy = 0.8 * width, centered.
std::vector<Camera> sample_cameras(int n, double radius, int width = 64,
                                   int height = 64);

/// n random poses with per-component angles uniform in [-max_angle,
/// max_angle]; poses indistinguishable from the canonical one (angular
/// distance < 1e-3) are redrawn.
std::vector<Pose> sample_poses(const Skeleton& skel, int n, double max_angle,
                               std::uint64_t seed);

struct Dataset {
  std::string root;
  Skeleton skel;
  Pose canonical;
  std::vector<FrameRecord> frames;

  std::vector<int> split_indices(const std::string& split) const;
  std::string resolve(const std::string& relative) const;
};

struct DatasetParams {
  double holdout_poses = 0.1;
  double holdout_cams = 0.1;
  double test_radius_scale = 1.5 / 2.25;  // per-axis shrink of held-out rigs
  std::uint64_t seed = 0;
  RenderOptions render;
};

/// Writes images (composited over black), binary masks and the manifest.
/// Every training pose is rendered by exactly one randomly chosen training
/// camera, every test pose by one held-out camera moved to the test radius.
Dataset generate_dataset(const FigureVolumes& figure, const Skeleton& skel,
                         const Pose& canonical, const std::vector<Pose>& poses,
                         const std::vector<Camera>& cameras,
                         const std::string& out_dir,
                         const DatasetParams& params);

/// Loads dataset.json + manifest.jsonl and checks the referenced files exist.
Dataset load_dataset(const std::string& dir);

}  // namespace volrig

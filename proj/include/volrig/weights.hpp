#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "volrig/grid.hpp"
#include "volrig/kinematics.hpp"

namespace volrig {

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double softplus_inv(double y) { return std::log(std::expm1(y)); }

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

/// Bone k as a world-space segment under a pose: from the parent joint to
/// joint k. The root bone is the degenerate segment at the root joint.
struct BoneSegment {
  Vec3 a, b;
  Vec3 midpoint() const { return 0.5 * (a + b); }
  double length() const { return (b - a).norm(); }
};

std::vector<BoneSegment> bone_segments(const Skeleton& skel, const Pose& pose);

/// Default world box: union of per-bone segment boxes, each dilated by
/// 3 * sigma_r of its bone.
GridBox default_grid_box(const Skeleton& skel, const Pose& canonical,
                         const std::array<int, 3>& dims);

/// Raw weight parameters: the learned offsets plus the fixed Gaussian prior.
struct WeightLogits {
  VoxelGrid delta;  // K+1 channels of pre-softmax offsets
  VoxelGrid prior;  // normalized Gaussian bone prior, same shape
};

/// Ellipsoidal Gaussian around each bone (axial sigma = half bone length,
/// radial sigma from the skeleton config) plus a floored background
/// channel, renormalized to sum to one per voxel.
VoxelGrid gaussian_prior(const Skeleton& skel, const Pose& canonical,
                         const GridBox& box);

/// W = softmax(delta + log prior) per voxel, computed with max subtraction.
VoxelGrid weights_from_logits(const WeightLogits& wl);

/// Softplus on all four channels; alpha additionally clamped to [0, 1].
VoxelGrid activate_canonical(const VoxelGrid& raw);

}  // namespace volrig

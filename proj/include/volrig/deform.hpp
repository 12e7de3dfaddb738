#pragma once

#include <array>
#include <optional>
#include <vector>

#include "volrig/grid.hpp"
#include "volrig/kinematics.hpp"

namespace volrig {

constexpr double kZeroSupport = 1e-8;
constexpr int kMaxBones = 64;

/// Read-only view of the posed volume V(x; rho): an activated canonical
/// RGBA grid, a K+1-channel weight grid in canonical space, and per-bone
/// motion bases mapping target-pose points back to canonical space.
class PosedVolumeView {
 public:
  PosedVolumeView(const VoxelGrid& canonical, const VoxelGrid& weights,
                  MotionBasisSet bases);
  // The view only references the grids; temporaries would dangle.
  PosedVolumeView(VoxelGrid&&, const VoxelGrid&, MotionBasisSet) = delete;
  PosedVolumeView(const VoxelGrid&, VoxelGrid&&, MotionBasisSet) = delete;
  PosedVolumeView(VoxelGrid&&, VoxelGrid&&, MotionBasisSet) = delete;

  const VoxelGrid& canonical() const { return *canonical_; }
  const VoxelGrid& weights() const { return *weights_; }
  const MotionBasisSet& bases() const { return bases_; }
  int bone_count() const { return static_cast<int>(bases_.size()); }

  /// World-space bounds of possible subject support in the target pose:
  /// the union of the weight box carried through each inverse basis.
  /// Outside it every bone sample is out-of-grid and the mask is zero.
  const Vec3& march_min() const { return march_min_; }
  const Vec3& march_max() const { return march_max_; }

  /// Writes s_i = w_i(B_i(x)) for every bone into s (length >= K) and
  /// returns their sum. Out-of-grid bone samples are zero.
  double bone_supports(const Vec3& x, double* s) const;

 private:
  const VoxelGrid* canonical_;
  const VoxelGrid* weights_;
  MotionBasisSet bases_;
  Vec3 march_min_, march_max_;
};

/// Normalized skinning weights w-hat at a target-space point; all zeros
/// when the total support falls below kZeroSupport.
std::vector<double> normalized_weights(const PosedVolumeView& view,
                                       const Vec3& x);

/// Eq-4 combiner: sum of w-hat_i * B_i(x) for externally supplied weights.
Vec3 blend_bases(const MotionBasisSet& bases, const std::vector<double>& w_hat,
                 const Vec3& x);

/// The LBS warp T(x); empty when the point has no bone support.
std::optional<Vec3> warp_point(const PosedVolumeView& view, const Vec3& x);

/// Subject-occupancy mask: clamped sum of the bone supports (background
/// channel excluded).
double mask_at(const PosedVolumeView& view, const Vec3& x);

/// M(x) * Vc(T(x)); the zero 4-vector for unmapped or out-of-grid points.
std::array<double, 4> sample_target(const PosedVolumeView& view, const Vec3& x);

}  // namespace volrig

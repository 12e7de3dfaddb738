#pragma once

#include <vector>

#include "volrig/types.hpp"

namespace volrig {

constexpr int kNoParent = -1;

/// Kinematic tree. Joint 0 is the root; parents precede children
/// (parent[k] < k), so chain products can be evaluated in index order.
/// Bone k is the segment from joint k to its parent; the root bone is
/// anchored at the root joint (zero length).
struct Skeleton {
  std::vector<int> parent;          // kNoParent for the root
  std::vector<Vec3> rest_offsets;   // joint center in parent-local space
  std::vector<double> sigma_r;      // radial sigma of the bone's weight prior

  int bone_count() const { return static_cast<int>(parent.size()); }

  /// Throws ConfigError if the tree structure is malformed.
  void validate() const;

  /// World-space joint positions in the rest configuration.
  std::vector<Vec3> rest_joints() const;
};

/// A body pose: world-space rest joints J plus per-joint axis-angle
/// rotations about those joints.
struct Pose {
  std::vector<Vec3> joints;   // J, world space
  std::vector<Vec3> angles;   // omega, radians * unit axis

  int joint_count() const { return static_cast<int>(joints.size()); }
};

/// Rest pose of the skeleton: all-zero angles, joints from rest offsets.
Pose rest_pose(const Skeleton& skel);

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  RigidTransform inverse() const;
  RigidTransform compose(const RigidTransform& then_inner) const;
  Mat4 matrix() const;
};

/// Per-bone rigid maps carrying target-pose space to canonical-pose space.
using MotionBasisSet = std::vector<RigidTransform>;

/// Rotation matrix from an axis-angle vector; series expansion below
/// 1e-8 to avoid the 0/0 at the origin.
Mat3 rodrigues(const Vec3& omega);

/// Chain product of [R(omega_i) | j_i] from the root down to joint k,
/// with j_i the parent-local offset derived from the pose's world joints.
RigidTransform world_transform(const Skeleton& skel, const Pose& pose, int k);

/// G_k(canonical) * G_k(target)^-1: the rigid map taking bone-k points in
/// the target pose back to the canonical pose.
RigidTransform relative_transform(const Skeleton& skel, const Pose& canonical,
                                  const Pose& target, int k);

MotionBasisSet motion_bases(const Skeleton& skel, const Pose& canonical,
                            const Pose& target);

/// World-space joint positions under a pose (translation part of each G_k).
std::vector<Vec3> posed_joints(const Skeleton& skel, const Pose& pose);

}  // namespace volrig

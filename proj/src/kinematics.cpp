#include "volrig/kinematics.hpp"

#include <cmath>

namespace volrig {

void Skeleton::validate() const {
  const int k = bone_count();
  if (k < 1) throw ConfigError("skeleton must have at least one bone");
  if (static_cast<int>(rest_offsets.size()) != k ||
      static_cast<int>(sigma_r.size()) != k)
    throw ConfigError("skeleton arrays disagree on bone count");
  if (parent[0] != kNoParent)
    throw ConfigError("joint 0 must be the root");
  for (int i = 1; i < k; ++i) {
    if (parent[i] < 0 || parent[i] >= i)
      throw ConfigError("parent index of joint " + std::to_string(i) +
                        " must be a smaller joint index");
  }
  for (int i = 0; i < k; ++i) {
    if (!(sigma_r[i] > 0.0))
      throw ConfigError("sigma_r must be positive for every bone");
  }
}

std::vector<Vec3> Skeleton::rest_joints() const {
  std::vector<Vec3> joints(parent.size());
  for (int i = 0; i < bone_count(); ++i) {
    joints[i] = rest_offsets[i];
    if (parent[i] != kNoParent) joints[i] += joints[parent[i]];
  }
  return joints;
}

Pose rest_pose(const Skeleton& skel) {
  Pose pose;
  pose.joints = skel.rest_joints();
  pose.angles.assign(skel.parent.size(), Vec3::Zero());
  return pose;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
  RigidTransform out;
  out.rotation = rotation * inner.rotation;
  out.translation = rotation * inner.translation + translation;
  return out;
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Mat3 rodrigues(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  Mat3 k;
  k << 0, -omega.z(), omega.y(),
       omega.z(), 0, -omega.x(),
       -omega.y(), omega.x(), 0;
  double a, b;  // R = I + a*K + b*K^2
  if (theta2 < 1e-16) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * (k * k);
}

namespace {

// Parent-local offset of joint i implied by the pose's world rest joints.
Vec3 local_offset(const Skeleton& skel, const Pose& pose, int i) {
  if (skel.parent[i] == kNoParent) return pose.joints[i];
  return pose.joints[i] - pose.joints[skel.parent[i]];
}

}  // namespace

RigidTransform world_transform(const Skeleton& skel, const Pose& pose, int k) {
  if (k < 0 || k >= skel.bone_count())
    throw std::out_of_range("bone index out of range");
  // Walk root -> k and left-multiply in chain order.
  std::vector<int> chain;
  for (int i = k; i != kNoParent; i = skel.parent[i]) chain.push_back(i);
  RigidTransform g;
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    RigidTransform link;
    link.rotation = rodrigues(pose.angles[*it]);
    link.translation = local_offset(skel, pose, *it);
    g = g.compose(link);
  }
  return g;
}

RigidTransform relative_transform(const Skeleton& skel, const Pose& canonical,
                                  const Pose& target, int k) {
  return world_transform(skel, canonical, k)
      .compose(world_transform(skel, target, k).inverse());
}

MotionBasisSet motion_bases(const Skeleton& skel, const Pose& canonical,
                            const Pose& target) {
  MotionBasisSet bases(skel.bone_count());
  for (int k = 0; k < skel.bone_count(); ++k)
    bases[k] = relative_transform(skel, canonical, target, k);
  return bases;
}

std::vector<Vec3> posed_joints(const Skeleton& skel, const Pose& pose) {
  std::vector<Vec3> joints(skel.bone_count());
  std::vector<RigidTransform> g(skel.bone_count());
  for (int i = 0; i < skel.bone_count(); ++i) {
    RigidTransform link;
    link.rotation = rodrigues(pose.angles[i]);
    link.translation = local_offset(skel, pose, i);
    g[i] = (skel.parent[i] == kNoParent) ? link : g[skel.parent[i]].compose(link);
    joints[i] = g[i].translation;
  }
  return joints;
}

}  // namespace volrig

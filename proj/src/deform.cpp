#include "volrig/deform.hpp"

#include <algorithm>

namespace volrig {

PosedVolumeView::PosedVolumeView(const VoxelGrid& canonical,
                                 const VoxelGrid& weights,
                                 MotionBasisSet bases)
    : canonical_(&canonical), weights_(&weights), bases_(std::move(bases)) {
  const int k = bone_count();
  if (k < 1 || k > kMaxBones)
    throw ConfigError("unsupported bone count");
  if (weights.channels != k + 1)
    throw ConfigError("weight grid must have K+1 channels");
  if (canonical.channels != 4)
    throw ConfigError("canonical grid must have 4 channels");

  march_min_ = Vec3::Constant(std::numeric_limits<double>::max());
  march_max_ = Vec3::Constant(std::numeric_limits<double>::lowest());
  const GridBox& wb = weights.box;
  for (int i = 0; i < k; ++i) {
    const RigidTransform inv = bases_[i].inverse();
    for (int corner = 0; corner < 8; ++corner) {
      const Vec3 c(corner & 1 ? wb.max.x() : wb.min.x(),
                   corner & 2 ? wb.max.y() : wb.min.y(),
                   corner & 4 ? wb.max.z() : wb.min.z());
      const Vec3 p = inv.apply(c);
      march_min_ = march_min_.cwiseMin(p);
      march_max_ = march_max_.cwiseMax(p);
    }
  }
}

double PosedVolumeView::bone_supports(const Vec3& x, double* s) const {
  double sum = 0.0;
  for (int i = 0; i < bone_count(); ++i) {
    const Vec3 y = bases_[i].apply(x);
    TrilinearStencil st;
    s[i] = make_stencil(weights_->box, y, st) ? stencil_sample(*weights_, st, i)
                                              : 0.0;
    sum += s[i];
  }
  return sum;
}

std::vector<double> normalized_weights(const PosedVolumeView& view,
                                       const Vec3& x) {
  std::array<double, kMaxBones> s;
  const double sum = view.bone_supports(x, s.data());
  std::vector<double> w(view.bone_count(), 0.0);
  if (sum < kZeroSupport) return w;
  for (int i = 0; i < view.bone_count(); ++i) w[i] = s[i] / sum;
  return w;
}

Vec3 blend_bases(const MotionBasisSet& bases, const std::vector<double>& w_hat,
                 const Vec3& x) {
  Vec3 y = Vec3::Zero();
  for (std::size_t i = 0; i < bases.size(); ++i)
    y += w_hat[i] * bases[i].apply(x);
  return y;
}

std::optional<Vec3> warp_point(const PosedVolumeView& view, const Vec3& x) {
  std::array<double, kMaxBones> s;
  const double sum = view.bone_supports(x, s.data());
  if (sum < kZeroSupport) return std::nullopt;
  Vec3 y = Vec3::Zero();
  for (int i = 0; i < view.bone_count(); ++i)
    y += (s[i] / sum) * view.bases()[i].apply(x);
  return y;
}

double mask_at(const PosedVolumeView& view, const Vec3& x) {
  std::array<double, kMaxBones> s;
  const double sum = view.bone_supports(x, s.data());
  return std::clamp(sum, 0.0, 1.0);
}

std::array<double, 4> sample_target(const PosedVolumeView& view,
                                    const Vec3& x) {
  std::array<double, 4> out = {0.0, 0.0, 0.0, 0.0};
  std::array<double, kMaxBones> s;
  const double sum = view.bone_supports(x, s.data());
  if (sum < kZeroSupport) return out;
  Vec3 y = Vec3::Zero();
  for (int i = 0; i < view.bone_count(); ++i)
    y += (s[i] / sum) * view.bases()[i].apply(x);
  TrilinearStencil st;
  if (!make_stencil(view.canonical().box, y, st)) return out;
  const double m = std::clamp(sum, 0.0, 1.0);
  for (int c = 0; c < 4; ++c)
    out[c] = m * stencil_sample(view.canonical(), st, c);
  return out;
}

}  // namespace volrig

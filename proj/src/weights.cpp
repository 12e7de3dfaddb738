#include "volrig/weights.hpp"

#include <algorithm>

namespace volrig {

namespace {
constexpr double kBackgroundFloor = 1e-6;
constexpr double kLogFloor = 1e-300;  // keeps log(prior) finite
}  // namespace

std::vector<BoneSegment> bone_segments(const Skeleton& skel, const Pose& pose) {
  const std::vector<Vec3> joints = posed_joints(skel, pose);
  std::vector<BoneSegment> segs(skel.bone_count());
  for (int k = 0; k < skel.bone_count(); ++k) {
    segs[k].b = joints[k];
    segs[k].a = skel.parent[k] == kNoParent ? joints[k] : joints[skel.parent[k]];
  }
  return segs;
}

GridBox default_grid_box(const Skeleton& skel, const Pose& canonical,
                         const std::array<int, 3>& dims) {
  const auto segs = bone_segments(skel, canonical);
  GridBox box;
  box.min = Vec3::Constant(std::numeric_limits<double>::max());
  box.max = Vec3::Constant(std::numeric_limits<double>::lowest());
  for (int k = 0; k < skel.bone_count(); ++k) {
    const double pad = 3.0 * skel.sigma_r[k];
    for (int a = 0; a < 3; ++a) {
      box.min[a] = std::min({box.min[a], segs[k].a[a] - pad, segs[k].b[a] - pad});
      box.max[a] = std::max({box.max[a], segs[k].a[a] + pad, segs[k].b[a] + pad});
    }
  }
  box.dims = dims;
  box.validate();
  return box;
}

VoxelGrid gaussian_prior(const Skeleton& skel, const Pose& canonical,
                         const GridBox& box) {
  const auto segs = bone_segments(skel, canonical);
  const int bones = skel.bone_count();
  VoxelGrid prior(box, bones + 1);
  std::vector<double> vals(bones + 1);
  for (int iz = 0; iz < box.dims[2]; ++iz)
    for (int iy = 0; iy < box.dims[1]; ++iy)
      for (int ix = 0; ix < box.dims[0]; ++ix) {
        const Vec3 x = box.voxel_center(ix, iy, iz);
        double sum = 0.0;
        for (int k = 0; k < bones; ++k) {
          const Vec3 d = x - segs[k].midpoint();
          const double len = segs[k].length();
          const double sr2 = 2.0 * skel.sigma_r[k] * skel.sigma_r[k];
          double e;
          if (len < 1e-12) {
            e = d.squaredNorm() / sr2;  // zero-length bone: isotropic
          } else {
            const Vec3 axis = (segs[k].b - segs[k].a) / len;
            const double d_ax = d.dot(axis);
            const double d_rad2 = std::max(0.0, d.squaredNorm() - d_ax * d_ax);
            const double sa = 0.5 * len;
            e = d_ax * d_ax / (2.0 * sa * sa) + d_rad2 / sr2;
          }
          vals[k] = std::exp(-e);
          sum += vals[k];
        }
        vals[bones] = std::max(kBackgroundFloor, 1.0 - sum);
        sum += vals[bones];
        for (int c = 0; c <= bones; ++c)
          prior.at(ix, iy, iz, c) = vals[c] / sum;
      }
  return prior;
}

VoxelGrid weights_from_logits(const WeightLogits& wl) {
  if (wl.delta.channels != wl.prior.channels ||
      wl.delta.box.dims != wl.prior.box.dims)
    throw ConfigError("weight logits and prior must share shape");
  const int c = wl.delta.channels;
  VoxelGrid out(wl.delta.box, c);
  const std::int64_t n = wl.delta.box.voxel_count();
  std::vector<double> z(c);
  for (std::int64_t v = 0; v < n; ++v) {
    const std::int64_t base = v * c;
    double zmax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < c; ++i) {
      z[i] = wl.delta.values[base + i] +
             std::log(std::max(wl.prior.values[base + i], kLogFloor));
      zmax = std::max(zmax, z[i]);
    }
    double sum = 0.0;
    for (int i = 0; i < c; ++i) {
      z[i] = std::exp(z[i] - zmax);
      sum += z[i];
    }
    for (int i = 0; i < c; ++i) out.values[base + i] = z[i] / sum;
  }
  return out;
}

VoxelGrid activate_canonical(const VoxelGrid& raw) {
  if (raw.channels != 4)
    throw ConfigError("canonical volume must have 4 channels");
  VoxelGrid out(raw.box, 4);
  const std::int64_t n = raw.box.voxel_count();
  for (std::int64_t v = 0; v < n; ++v) {
    const std::int64_t base = v * 4;
    for (int c = 0; c < 4; ++c)
      out.values[base + c] = softplus(raw.values[base + c]);
    out.values[base + 3] = std::min(out.values[base + 3], 1.0);
  }
  return out;
}

}  // namespace volrig

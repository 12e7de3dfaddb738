#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "volrig/grid.hpp"
#include "volrig/kinematics.hpp"
#include "volrig/rng.hpp"

namespace volrig::test {

/// Unique scratch directory under the system temp dir, removed on exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("volrig_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::filesystem::path operator/(const std::string& sub) const {
    return path_ / sub;
  }

 private:
  std::filesystem::path path_;
};

/// Independent 8-corner interpolation used as the oracle for the library's
/// trilinear sampler; written directly from the definition.
inline double oracle_trilinear(const VoxelGrid& g, const Vec3& p, int channel) {
  const Vec3 h = g.box.voxel_size();
  double w[3][2];
  int i0[3];
  for (int a = 0; a < 3; ++a) {
    const double u = (p[a] - g.box.min[a]) / h[a] - 0.5;
    i0[a] = static_cast<int>(std::floor(u));
    const double f = u - std::floor(u);
    w[a][0] = 1.0 - f;
    w[a][1] = f;
  }
  auto cl = [&](int v, int axis) {
    return std::max(0, std::min(v, g.box.dims[axis] - 1));
  };
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        acc += w[0][dx] * w[1][dy] * w[2][dz] *
               g.at(cl(i0[0] + dx, 0), cl(i0[1] + dy, 1), cl(i0[2] + dz, 2),
                    channel);
  return acc;
}

inline Vec3 random_vec(Rng& rng, double lo, double hi) {
  return Vec3(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
}

/// Serial chain skeleton with the root's blob at the top.
inline Skeleton chain_skeleton(int bones, double segment = 0.3,
                               double sigma_r = 0.1) {
  Skeleton s;
  s.parent.push_back(kNoParent);
  s.rest_offsets.emplace_back(0.0, 0.0, 0.0);
  s.sigma_r.push_back(sigma_r);
  for (int i = 1; i < bones; ++i) {
    s.parent.push_back(i - 1);
    s.rest_offsets.emplace_back(0.0, 0.0, -segment);
    s.sigma_r.push_back(sigma_r);
  }
  s.validate();
  return s;
}

inline Pose random_pose(const Skeleton& skel, Rng& rng, double max_angle) {
  Pose p = rest_pose(skel);
  for (Vec3& w : p.angles) w = random_vec(rng, -max_angle, max_angle);
  return p;
}

}  // namespace volrig::test

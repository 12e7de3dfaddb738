#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volrig/types.hpp"

namespace volrig {

/// Axis-aligned world box with a voxel resolution per axis.
struct GridBox {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();
  std::array<int, 3> dims = {2, 2, 2};  // nx, ny, nz

  void validate() const;
  Vec3 voxel_size() const;
  double min_voxel_edge() const;
  std::int64_t voxel_count() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }
  bool contains(const Vec3& p) const;
  /// Center of voxel (ix, iy, iz) in world space.
  Vec3 voxel_center(int ix, int iy, int iz) const;
};

/// Dense voxel grid, C channels per voxel. Values are laid out x-fastest,
/// then y, then z, channels interleaved per voxel.
struct VoxelGrid {
  GridBox box;
  int channels = 1;
  std::vector<double> values;

  VoxelGrid() = default;
  VoxelGrid(const GridBox& b, int c, double fill = 0.0);

  std::int64_t index(int ix, int iy, int iz, int c = 0) const {
    return (static_cast<std::int64_t>(iz) * box.dims[1] + iy) * box.dims[0] * channels +
           static_cast<std::int64_t>(ix) * channels + c;
  }
  double& at(int ix, int iy, int iz, int c = 0) { return values[index(ix, iy, iz, c)]; }
  double at(int ix, int iy, int iz, int c = 0) const { return values[index(ix, iy, iz, c)]; }
};

/// The 8-corner interpolation stencil of a world point. Corners are clamped
/// to the voxel-center lattice, so the interpolant is constant along an axis
/// within half a voxel of the box face.
struct TrilinearStencil {
  std::int64_t corner[8];  // voxel index (channel 0) of each corner
  double weight[8];
  double dweight[8][3];    // d(weight)/d(world position)
};

/// Builds the stencil for p. Returns false (stencil untouched) when p lies
/// outside the box; callers substitute the out-of-grid value.
bool make_stencil(const GridBox& box, const Vec3& p, TrilinearStencil& out);

double stencil_sample(const VoxelGrid& grid, const TrilinearStencil& st, int c);

/// Trilinear interpolation of all channels at p; out-of-box points yield
/// `outside_value` in every channel (0 for RGBA grids).
std::vector<double> trilinear_sample(const VoxelGrid& grid, const Vec3& p,
                                     double outside_value = 0.0);

/// Volume file format: magic "VOLR", u32 version=1, u32 nx,ny,nz,C,
/// 6 x f64 box corners, then nx*ny*nz*C f32 values, little-endian,
/// same layout as VoxelGrid::values.
void write_volume(const VoxelGrid& grid, const std::string& path);
VoxelGrid read_volume(const std::string& path);

}  // namespace volrig

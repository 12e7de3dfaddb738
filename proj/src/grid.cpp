#include "volrig/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace volrig {

void GridBox::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(max[a] > min[a]))
      throw ConfigError("grid box max must exceed min on every axis");
    if (dims[a] < 2) throw ConfigError("grid needs at least 2 voxels per axis");
  }
}

Vec3 GridBox::voxel_size() const {
  return Vec3((max.x() - min.x()) / dims[0], (max.y() - min.y()) / dims[1],
              (max.z() - min.z()) / dims[2]);
}

double GridBox::min_voxel_edge() const {
  const Vec3 h = voxel_size();
  return std::min({h.x(), h.y(), h.z()});
}

bool GridBox::contains(const Vec3& p) const {
  for (int a = 0; a < 3; ++a)
    if (p[a] < min[a] || p[a] > max[a]) return false;
  return true;
}

Vec3 GridBox::voxel_center(int ix, int iy, int iz) const {
  const Vec3 h = voxel_size();
  return min + Vec3((ix + 0.5) * h.x(), (iy + 0.5) * h.y(), (iz + 0.5) * h.z());
}

VoxelGrid::VoxelGrid(const GridBox& b, int c, double fill)
    : box(b), channels(c) {
  box.validate();
  if (c < 1) throw ConfigError("voxel grid needs at least one channel");
  values.assign(static_cast<std::size_t>(box.voxel_count()) * c, fill);
}

bool make_stencil(const GridBox& box, const Vec3& p, TrilinearStencil& out) {
  if (!box.contains(p)) return false;
  const Vec3 h = box.voxel_size();
  int lo[3];
  double f[3], inv_h[3];
  for (int a = 0; a < 3; ++a) {
    const double u = (p[a] - box.min[a]) / h[a] - 0.5;
    double fl = std::floor(u);
    lo[a] = static_cast<int>(fl);
    f[a] = u - fl;
    inv_h[a] = 1.0 / h[a];
  }
  const int nx = box.dims[0], ny = box.dims[1], nz = box.dims[2];
  auto clampi = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  int c = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx, ++c) {
        const int ix = clampi(lo[0] + dx, nx);
        const int iy = clampi(lo[1] + dy, ny);
        const int iz = clampi(lo[2] + dz, nz);
        out.corner[c] =
            (static_cast<std::int64_t>(iz) * ny + iy) * nx + ix;
        const double wx = dx ? f[0] : 1.0 - f[0];
        const double wy = dy ? f[1] : 1.0 - f[1];
        const double wz = dz ? f[2] : 1.0 - f[2];
        out.weight[c] = wx * wy * wz;
        // At a clamped edge both corners alias the same voxel, so the
        // opposing derivative terms cancel and the interpolant is flat.
        out.dweight[c][0] = (dx ? 1.0 : -1.0) * wy * wz * inv_h[0];
        out.dweight[c][1] = (dy ? 1.0 : -1.0) * wx * wz * inv_h[1];
        out.dweight[c][2] = (dz ? 1.0 : -1.0) * wx * wy * inv_h[2];
      }
  return true;
}

double stencil_sample(const VoxelGrid& grid, const TrilinearStencil& st, int c) {
  double v = 0.0;
  for (int i = 0; i < 8; ++i)
    v += st.weight[i] * grid.values[st.corner[i] * grid.channels + c];
  return v;
}

std::vector<double> trilinear_sample(const VoxelGrid& grid, const Vec3& p,
                                     double outside_value) {
  TrilinearStencil st;
  if (!make_stencil(grid.box, p, st))
    return std::vector<double>(grid.channels, outside_value);
  std::vector<double> out(grid.channels);
  for (int c = 0; c < grid.channels; ++c) out[c] = stencil_sample(grid, st, c);
  return out;
}

namespace {

constexpr char kMagic[4] = {'V', 'O', 'L', 'R'};
constexpr std::uint32_t kVersion = 1;
constexpr std::int64_t kMaxValues = std::int64_t{1} << 31;

template <class T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool read_raw(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<bool>(is);
}

}  // namespace

void write_volume(const VoxelGrid& grid, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open volume file for writing: " + path);
  os.write(kMagic, 4);
  write_raw(os, kVersion);
  for (int a = 0; a < 3; ++a)
    write_raw(os, static_cast<std::uint32_t>(grid.box.dims[a]));
  write_raw(os, static_cast<std::uint32_t>(grid.channels));
  for (int a = 0; a < 3; ++a) write_raw(os, grid.box.min[a]);
  for (int a = 0; a < 3; ++a) write_raw(os, grid.box.max[a]);
  std::vector<float> buf(grid.values.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<float>(grid.values[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw IoError("write failed: " + path);
}

VoxelGrid read_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open volume file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad magic in volume file: " + path);
  std::uint32_t version;
  if (!read_raw(is, version) || version != kVersion)
    throw IoError("unsupported volume file version in " + path);
  std::uint32_t nx, ny, nz, c;
  if (!read_raw(is, nx) || !read_raw(is, ny) || !read_raw(is, nz) ||
      !read_raw(is, c))
    throw IoError("truncated payload in volume file: " + path);
  constexpr std::uint32_t kMaxDim = 1u << 15;
  constexpr std::uint32_t kMaxChannels = 4096;
  if (nx < 2 || ny < 2 || nz < 2 || c < 1 || nx > kMaxDim || ny > kMaxDim ||
      nz > kMaxDim || c > kMaxChannels ||
      static_cast<std::int64_t>(nx) * ny * nz * c > kMaxValues)
    throw IoError("dimension overflow in volume file: " + path);
  const std::int64_t count = static_cast<std::int64_t>(nx) * ny * nz * c;
  VoxelGrid grid;
  grid.box.dims = {static_cast<int>(nx), static_cast<int>(ny),
                   static_cast<int>(nz)};
  grid.channels = static_cast<int>(c);
  for (int a = 0; a < 3; ++a)
    if (!read_raw(is, grid.box.min[a]))
      throw IoError("truncated payload in volume file: " + path);
  for (int a = 0; a < 3; ++a)
    if (!read_raw(is, grid.box.max[a]))
      throw IoError("truncated payload in volume file: " + path);
  grid.box.validate();
  std::vector<float> buf(static_cast<std::size_t>(count));
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (is.gcount() !=
      static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw IoError("truncated payload in volume file: " + path);
  grid.values.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) grid.values[i] = buf[i];
  return grid;
}

}  // namespace volrig

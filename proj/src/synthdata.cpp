#include "volrig/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "volrig/image.hpp"
#include "volrig/parallel.hpp"
#include "volrig/rng.hpp"

namespace fs = std::filesystem;

namespace volrig {

namespace {

const Vec3 kPalette[] = {
    {0.85, 0.25, 0.20}, {0.20, 0.75, 0.30}, {0.25, 0.35, 0.90},
    {0.90, 0.80, 0.20}, {0.80, 0.30, 0.80}, {0.20, 0.80, 0.80},
    {0.95, 0.55, 0.15}, {0.60, 0.60, 0.60},
};

double point_segment_distance(const Vec3& p, const BoneSegment& seg,
                              double* axial_fraction) {
  const Vec3 ab = seg.b - seg.a;
  const double len2 = ab.squaredNorm();
  double u = 0.5;
  if (len2 > 1e-24) u = std::clamp((p - seg.a).dot(ab) / len2, 0.0, 1.0);
  if (axial_fraction) *axial_fraction = u;
  return (p - (seg.a + u * ab)).norm();
}

}  // namespace

void FigureSpec::validate() const {
  skel.validate();
  const std::size_t k = static_cast<std::size_t>(skel.bone_count());
  if (capsule_radius.size() != k || colors.size() != k)
    throw ConfigError("figure arrays disagree with the bone count");
  for (double r : capsule_radius)
    if (!(r > 0.0)) throw ConfigError("capsule radii must be positive");
  for (const Vec3& c : colors)
    if (c.minCoeff() < 0.0 || c.maxCoeff() > 1.0)
      throw ConfigError("figure colors must lie in [0,1]");
  if (alpha < 0.0 || alpha > 1.0)
    throw ConfigError("figure alpha must lie in [0,1]");
}

FigureSpec figure_from_json(const Json& j) {
  FigureSpec spec;
  spec.skel = skeleton_from_json(j);
  const Json& bones = j.at("bones");
  for (int k = 0; k < spec.skel.bone_count(); ++k) {
    const Json& b = bones.at(k);
    spec.capsule_radius.push_back(
        b.value("capsule_radius", spec.skel.sigma_r[k]));
    if (b.contains("color")) {
      const auto c = b.at("color").get<std::vector<double>>();
      if (c.size() != 3) throw ConfigError("bone color must have 3 entries");
      spec.colors.emplace_back(c[0], c[1], c[2]);
    } else {
      spec.colors.push_back(kPalette[k % std::size(kPalette)]);
    }
  }
  spec.alpha = j.value("alpha", 1.0);
  spec.validate();
  return spec;
}

FigureVolumes make_figure(const FigureSpec& spec, const Pose& canonical,
                          const GridBox& canonical_box,
                          const GridBox& weight_box) {
  spec.validate();
  const auto segs = bone_segments(spec.skel, canonical);
  const int bones = spec.skel.bone_count();

  for (int k = 0; k < bones; ++k) {
    for (int a = 0; a < 3; ++a) {
      const double lo = std::min(segs[k].a[a], segs[k].b[a]) - spec.capsule_radius[k];
      const double hi = std::max(segs[k].a[a], segs[k].b[a]) + spec.capsule_radius[k];
      if (lo < canonical_box.min[a] || hi > canonical_box.max[a] ||
          lo < weight_box.min[a] || hi > weight_box.max[a])
        throw ConfigError("capsule of bone " + std::to_string(k) +
                          " lies outside the grid box");
    }
  }

  // Nearest containing capsule, ties to the lower bone index.
  auto assign = [&](const Vec3& x, double* axial) -> int {
    int best = -1;
    double best_d = 0.0;
    for (int k = 0; k < bones; ++k) {
      double u;
      const double d = point_segment_distance(x, segs[k], &u);
      if (d <= spec.capsule_radius[k] && (best == -1 || d < best_d)) {
        best = k;
        best_d = d;
        if (axial) *axial = u;
      }
    }
    return best;
  };

  FigureVolumes fig;
  fig.canonical = VoxelGrid(canonical_box, 4);
  for (int iz = 0; iz < canonical_box.dims[2]; ++iz)
    for (int iy = 0; iy < canonical_box.dims[1]; ++iy)
      for (int ix = 0; ix < canonical_box.dims[0]; ++ix) {
        double u = 0.5;
        const int k = assign(canonical_box.voxel_center(ix, iy, iz), &u);
        if (k < 0) continue;
        const Vec3 c = spec.colors[k] * (0.55 + 0.45 * u);  // axis-graded tint
        fig.canonical.at(ix, iy, iz, 0) = c.x();
        fig.canonical.at(ix, iy, iz, 1) = c.y();
        fig.canonical.at(ix, iy, iz, 2) = c.z();
        fig.canonical.at(ix, iy, iz, 3) = spec.alpha;
      }

  fig.weights = VoxelGrid(weight_box, bones + 1);
  for (int iz = 0; iz < weight_box.dims[2]; ++iz)
    for (int iy = 0; iy < weight_box.dims[1]; ++iy)
      for (int ix = 0; ix < weight_box.dims[0]; ++ix) {
        const int k = assign(weight_box.voxel_center(ix, iy, iz), nullptr);
        fig.weights.at(ix, iy, iz, k < 0 ? bones : k) = 1.0;
      }
  return fig;
}

std::pair<VoxelGrid, VoxelGrid> figure_to_params(const FigureVolumes& figure,
                                                 const VoxelGrid& prior) {
  VoxelGrid raw(figure.canonical.box, 4);
  for (std::size_t i = 0; i < raw.values.size(); ++i)
    raw.values[i] = softplus_inv(std::max(figure.canonical.values[i], 1e-9));

  if (prior.channels != figure.weights.channels ||
      prior.box.dims != figure.weights.box.dims)
    throw ConfigError("prior shape does not match the figure weights");
  // Logit 40 on the assigned channel saturates the softmax to ~1 - 4e-18.
  VoxelGrid delta(figure.weights.box, figure.weights.channels);
  for (std::size_t i = 0; i < delta.values.size(); ++i) {
    const double target = figure.weights.values[i] > 0.5 ? 40.0 : 0.0;
    delta.values[i] = target - std::log(std::max(prior.values[i], 1e-300));
  }
  return {std::move(raw), std::move(delta)};
}

std::vector<Camera> sample_cameras(int n, double radius, int width,
                                   int height) {
  if (n < 1) throw ConfigError("need at least one camera");
  if (!(radius > 0.0)) throw ConfigError("camera radius must be positive");
  const double fx = 0.8 * width;
  std::vector<Camera> cams;
  cams.reserve(n);
  if (n == 2) {
    // The two-point lattice is not antipodal; use the poles instead.
    cams.push_back(look_at_camera(Vec3(0, 0, radius), Vec3::Zero(), fx, fx,
                                  width, height));
    cams.push_back(look_at_camera(Vec3(0, 0, -radius), Vec3::Zero(), fx, fx,
                                  width, height));
    return cams;
  }
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden_angle * i;
    const Vec3 eye = radius * Vec3(r * std::cos(phi), r * std::sin(phi), z);
    cams.push_back(look_at_camera(eye, Vec3::Zero(), fx, fx, width, height));
  }
  return cams;
}

std::vector<Pose> sample_poses(const Skeleton& skel, int n, double max_angle,
                               std::uint64_t seed) {
  if (!(max_angle > 0.0) || max_angle >= std::numbers::pi)
    throw ConfigError("max_angle must be in (0, pi)");
  const std::vector<Vec3> joints = skel.rest_joints();
  Rng rng(seed);
  std::vector<Pose> poses;
  poses.reserve(n);
  while (static_cast<int>(poses.size()) < n) {
    Pose pose;
    pose.joints = joints;
    pose.angles.resize(skel.bone_count());
    double norm2 = 0.0;
    for (Vec3& w : pose.angles) {
      for (int a = 0; a < 3; ++a) w[a] = rng.uniform(-max_angle, max_angle);
      norm2 += w.squaredNorm();
    }
    if (norm2 < 1e-6) continue;  // too close to the canonical pose; redraw
    poses.push_back(std::move(pose));
  }
  return poses;
}

std::vector<int> Dataset::split_indices(const std::string& split) const {
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(frames.size()); ++i)
    if (frames[i].split == split) idx.push_back(i);
  return idx;
}

std::string Dataset::resolve(const std::string& relative) const {
  return (fs::path(root) / relative).string();
}

Dataset generate_dataset(const FigureVolumes& figure, const Skeleton& skel,
                         const Pose& canonical, const std::vector<Pose>& poses,
                         const std::vector<Camera>& cameras,
                         const std::string& out_dir,
                         const DatasetParams& params) {
  if (poses.empty() || cameras.empty())
    throw ConfigError("dataset generation needs poses and cameras");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "masks", ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);

  auto holdout_split = [](std::size_t n, double fraction, Rng& rng) {
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_index(i)]);
    const auto n_test = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(n)));
    std::vector<int> train(order.begin(), order.end() - n_test);
    std::vector<int> test(order.end() - n_test, order.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return std::make_pair(train, test);
  };

  Rng pose_rng(derive_seed(params.seed, 1));
  Rng cam_rng(derive_seed(params.seed, 2));
  auto [train_poses, test_poses] =
      holdout_split(poses.size(), params.holdout_poses, pose_rng);
  auto [train_cams, test_cams] =
      holdout_split(cameras.size(), params.holdout_cams, cam_rng);
  if (!test_poses.empty() && test_cams.empty()) {
    test_cams.push_back(train_cams.back());
    train_cams.pop_back();
  }
  if (!train_poses.empty() && train_cams.empty())
    throw ConfigError("camera holdout left no training cameras");

  // Held-out rigs shoot from the test radius.
  auto to_test_camera = [&](const Camera& cam) {
    return look_at_camera(cam.center() * params.test_radius_scale,
                          Vec3::Zero(), cam.fx, cam.fy, cam.width, cam.height);
  };

  Dataset ds;
  ds.root = out_dir;
  ds.skel = skel;
  ds.canonical = canonical;

  struct Job {
    Pose pose;
    Camera cam;
    std::string split;
    std::string stem;
  };
  std::vector<Job> jobs;
  Rng assign_train(derive_seed(params.seed, 3));
  Rng assign_test(derive_seed(params.seed, 4));
  char stem[32];
  for (std::size_t i = 0; i < train_poses.size(); ++i) {
    std::snprintf(stem, sizeof stem, "train_%05zu", i);
    const int cam = train_cams[assign_train.uniform_index(train_cams.size())];
    jobs.push_back({poses[train_poses[i]], cameras[cam], "train", stem});
  }
  for (std::size_t i = 0; i < test_poses.size(); ++i) {
    std::snprintf(stem, sizeof stem, "test_%05zu", i);
    const int cam = test_cams[assign_test.uniform_index(test_cams.size())];
    jobs.push_back(
        {poses[test_poses[i]], to_test_camera(cameras[cam]), "test", stem});
  }

  ds.frames.resize(jobs.size());
  const int threads = params.render.threads > 0 ? params.render.threads
                                                : default_thread_count();
  run_blocks(static_cast<int>(jobs.size()), threads, [&](int i) {
    const Job& job = jobs[i];
    const PosedVolumeView view(figure.canonical, figure.weights,
                               motion_bases(skel, canonical, job.pose));
    RenderOptions opts = params.render;
    opts.threads = 1;  // frames are the parallel unit here
    const RenderedImage render = render_image(view, job.cam, opts);

    Image rgb(render.width, render.height, 3);
    rgb.data = render.rgb;  // over a black background
    Image mask(render.width, render.height, 1);
    for (std::size_t p = 0; p < render.alpha.size(); ++p)
      mask.data[p] = render.alpha[p] > 0.0 ? 1.0 : 0.0;

    FrameRecord& f = ds.frames[i];
    f.image = "images/" + job.stem + ".png";
    f.mask = "masks/" + job.stem + ".png";
    f.pose = job.pose;
    f.camera = job.cam;
    f.split = job.split;
    write_png(rgb, (fs::path(out_dir) / f.image).string());
    write_png(mask, (fs::path(out_dir) / f.mask).string());
  });

  std::vector<Json> records;
  records.reserve(ds.frames.size());
  for (const FrameRecord& f : ds.frames) records.push_back(frame_to_json(f));
  write_jsonl(records, (fs::path(out_dir) / "manifest.jsonl").string());
  write_json_file(Json{{"skeleton", skeleton_to_json(skel)},
                       {"canonical_pose", pose_to_json(canonical)},
                       {"manifest", "manifest.jsonl"},
                       {"seed", params.seed},
                       {"train_frames", train_poses.size()},
                       {"test_frames", test_poses.size()}},
                  (fs::path(out_dir) / "dataset.json").string());
  return ds;
}

Dataset load_dataset(const std::string& dir) {
  const Json meta = read_json_file((fs::path(dir) / "dataset.json").string());
  Dataset ds;
  ds.root = dir;
  ds.skel = skeleton_from_json(meta.at("skeleton"));
  ds.canonical = pose_from_json(meta.at("canonical_pose"));
  const std::string manifest = meta.value("manifest", "manifest.jsonl");
  for (const Json& j : read_jsonl((fs::path(dir) / manifest).string())) {
    FrameRecord f = frame_from_json(j);
    if (!fs::exists(ds.resolve(f.image)))
      throw IoError("missing image file: " + ds.resolve(f.image));
    if (!fs::exists(ds.resolve(f.mask)))
      throw IoError("missing mask file: " + ds.resolve(f.mask));
    ds.frames.push_back(std::move(f));
  }
  return ds;
}

}  // namespace volrig

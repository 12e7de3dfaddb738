#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "test_util.hpp"
#include "volrig/fit.hpp"
#include "volrig/synthdata.hpp"

using namespace volrig;
using test::TempDir;

namespace {

FigureSpec chain_figure(int bones, double radius = 0.12) {
  FigureSpec spec;
  spec.skel = test::chain_skeleton(bones, 0.3, radius);
  spec.capsule_radius.assign(bones, radius);
  for (int k = 0; k < bones; ++k)
    spec.colors.push_back(Vec3(0.2 + 0.15 * k, 0.8 - 0.1 * k, 0.4));
  return spec;
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("make_figure: capsule interior and exterior assignment") {
  const FigureSpec spec = chain_figure(2);
  const Pose canonical = rest_pose(spec.skel);
  const GridBox box = default_grid_box(spec.skel, canonical, {16, 16, 16});
  const FigureVolumes fig = make_figure(spec, canonical, box, box);
  const auto segs = bone_segments(spec.skel, canonical);

  // A voxel near the midpoint of bone 1's axis carries its one-hot weight.
  const Vec3 mid = segs[1].midpoint();
  const Vec3 h = box.voxel_size();
  int ix = static_cast<int>((mid.x() - box.min.x()) / h.x());
  int iy = static_cast<int>((mid.y() - box.min.y()) / h.y());
  int iz = static_cast<int>((mid.z() - box.min.z()) / h.z());
  CHECK(fig.weights.at(ix, iy, iz, 1) == 1.0);
  CHECK(fig.weights.at(ix, iy, iz, 0) == 0.0);
  CHECK(fig.canonical.at(ix, iy, iz, 3) == 1.0);

  // Far corner: background one-hot, zero color and alpha.
  CHECK(fig.weights.at(0, 0, 0, 2) == 1.0);
  CHECK(fig.canonical.at(0, 0, 0, 3) == 0.0);
  CHECK(fig.canonical.at(0, 0, 0, 0) == 0.0);
}

TEST_CASE("make_figure: weights are one-hot everywhere") {
  const FigureSpec spec = chain_figure(3);
  const Pose canonical = rest_pose(spec.skel);
  const GridBox box = default_grid_box(spec.skel, canonical, {12, 12, 14});
  const FigureVolumes fig = make_figure(spec, canonical, box, box);
  for (std::int64_t v = 0; v < box.voxel_count(); ++v) {
    double sum = 0.0, maxc = 0.0;
    for (int c = 0; c < 4; ++c) {
      sum += fig.weights.values[v * 4 + c];
      maxc = std::max(maxc, fig.weights.values[v * 4 + c]);
    }
    CHECK(sum == 1.0);
    CHECK(maxc == 1.0);
  }
}

TEST_CASE("make_figure: overlap tie goes to the lower bone index") {
  // Two parallel capsules at x = -0.1 and x = +0.1; the voxel centered on
  // the mid plane is equidistant and inside both.
  Skeleton s;
  s.parent = {kNoParent, 0, 0, 2};
  s.rest_offsets = {Vec3(-0.1, 0, -0.6), Vec3(0, 0, 0.6), Vec3(0.2, 0, 0),
                    Vec3(0, 0, 0.6)};
  s.sigma_r = {0.01, 0.15, 0.01, 0.15};
  s.validate();
  FigureSpec spec;
  spec.skel = s;
  spec.capsule_radius = {0.01, 0.15, 0.01, 0.15};
  spec.colors.assign(4, Vec3(0.5, 0.5, 0.5));

  const Pose canonical = rest_pose(s);
  GridBox box{Vec3(-0.45, -0.45, -0.95), Vec3(0.45, 0.45, 0.25), {9, 9, 12}};
  const FigureVolumes fig = make_figure(spec, canonical, box, box);
  CHECK((box.voxel_center(4, 4, 6) - Vec3(0.0, 0.0, -0.3)).norm() < 1e-12);
  CHECK(fig.weights.at(4, 4, 6, 1) == 1.0);  // bone 1 beats bone 3 on the tie
  CHECK(fig.weights.at(4, 4, 6, 3) == 0.0);
}

TEST_CASE("make_figure: capsule outside the box is an error") {
  const FigureSpec spec = chain_figure(2);
  const Pose canonical = rest_pose(spec.skel);
  GridBox tiny{Vec3(-0.05, -0.05, -0.05), Vec3(0.05, 0.05, 0.05), {4, 4, 4}};
  const GridBox ok = default_grid_box(spec.skel, canonical, {8, 8, 8});
  CHECK_THROWS_AS(make_figure(spec, canonical, tiny, ok), ConfigError);
}

TEST_CASE("figure_from_json: defaults and validation") {
  const Json j = Json::parse(R"({
    "bones": [
      {"parent": -1, "offset": [0, 0, 0.4], "sigma_r": 0.1},
      {"parent": 0, "offset": [0, 0, -0.3], "sigma_r": 0.1,
       "capsule_radius": 0.08, "color": [0.1, 0.2, 0.3]}
    ]})");
  const FigureSpec spec = figure_from_json(j);
  CHECK(spec.capsule_radius[0] == 0.1);  // defaults to sigma_r
  CHECK(spec.capsule_radius[1] == 0.08);
  CHECK((spec.colors[1] - Vec3(0.1, 0.2, 0.3)).norm() == 0.0);
}

TEST_CASE("sample_cameras: two cameras are antipodal") {
  const auto cams = sample_cameras(2, 1.5);
  REQUIRE(cams.size() == 2);
  const Vec3 a = cams[0].center();
  const Vec3 b = cams[1].center();
  CHECK(a.norm() == doctest::Approx(1.5).epsilon(1e-9));
  const double angle = std::acos(a.dot(b) / (a.norm() * b.norm()));
  CHECK(std::abs(angle - std::numbers::pi) < 1e-6);
}

TEST_CASE("sample_cameras: 144 centers on the sphere, looking at the origin") {
  const auto cams = sample_cameras(144, 2.25);
  REQUIRE(cams.size() == 144);
  for (const Camera& cam : cams) {
    CHECK(std::abs(cam.center().norm() - 2.25) < 1e-9);
    // Camera forward (third rotation row) points at the origin.
    const Vec3 forward = cam.extrinsic.rotation.row(2);
    CHECK((forward - (-cam.center()).normalized()).norm() < 1e-9);
  }
}

TEST_CASE("sample_cameras: 64 cameras keep near-uniform separation") {
  const auto cams = sample_cameras(64, 1.0);
  double min_angle = std::numbers::pi;
  for (std::size_t i = 0; i < cams.size(); ++i)
    for (std::size_t j = i + 1; j < cams.size(); ++j) {
      const Vec3 a = cams[i].center(), b = cams[j].center();
      const double c = std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0);
      min_angle = std::min(min_angle, std::acos(c));
    }
  // Ideal equal-area spacing: hexagonal-packing nearest-neighbor distance.
  const double ideal = std::sqrt(8.0 * std::numbers::pi /
                                 (std::sqrt(3.0) * 64.0));
  CHECK(min_angle >= 0.6 * ideal);
}

TEST_CASE("sample_poses: determinism, bounds, rejection of the canonical") {
  const Skeleton skel = test::chain_skeleton(3);
  const auto a = sample_poses(skel, 20, 0.5, 77);
  const auto b = sample_poses(skel, 20, 0.5, 77);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) {
    double norm2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      CHECK((a[i].angles[k] - b[i].angles[k]).norm() == 0.0);
      for (int c = 0; c < 3; ++c) CHECK(std::abs(a[i].angles[k][c]) <= 0.5);
      norm2 += a[i].angles[k].squaredNorm();
    }
    CHECK(std::sqrt(norm2) >= 1e-3);
  }
}

TEST_CASE("sample_poses: per-component empirical mean near zero") {
  const Skeleton skel = test::chain_skeleton(2);
  const auto poses = sample_poses(skel, 1000, 0.5, 2024);
  const double sigma_mean = 0.5 / std::sqrt(3.0 * 1000.0);
  for (int k = 0; k < 2; ++k)
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (const Pose& p : poses) mean += p.angles[k][c];
      mean /= poses.size();
      CHECK(std::abs(mean) <= 3.0 * sigma_mean);
    }
}

TEST_CASE("generate_dataset: holdout zero keeps every pose in train") {
  TempDir tmp("ds0");
  const FigureSpec spec = chain_figure(2);
  const Pose canonical = rest_pose(spec.skel);
  const GridBox box = default_grid_box(spec.skel, canonical, {10, 10, 10});
  const FigureVolumes fig = make_figure(spec, canonical, box, box);
  DatasetParams params;
  params.holdout_poses = 0.0;
  params.holdout_cams = 0.0;
  const Dataset ds = generate_dataset(
      fig, spec.skel, canonical, sample_poses(spec.skel, 7, 0.5, 1),
      sample_cameras(4, 2.25, 16, 16), tmp.str(), params);
  CHECK(ds.split_indices("train").size() == 7);
  CHECK(ds.split_indices("test").empty());
}

TEST_CASE("generate_dataset: 100 poses at 10% holdout split 90/10") {
  TempDir tmp("ds100");
  const FigureSpec spec = chain_figure(2);
  const Pose canonical = rest_pose(spec.skel);
  const GridBox box = default_grid_box(spec.skel, canonical, {8, 8, 8});
  const FigureVolumes fig = make_figure(spec, canonical, box, box);
  DatasetParams params;
  params.seed = 3;
  const Dataset ds = generate_dataset(
      fig, spec.skel, canonical, sample_poses(spec.skel, 100, 0.4, 2),
      sample_cameras(10, 2.25, 8, 8), tmp.str(), params);
  CHECK(ds.split_indices("train").size() == 90);
  CHECK(ds.split_indices("test").size() == 10);

  // Pose sets are disjoint: no angle vector appears in both splits.
  std::set<std::string> train_keys;
  for (int i : ds.split_indices("train")) {
    std::string key;
    for (const Vec3& w : ds.frames[i].pose.angles)
      key += std::to_string(w.x()) + "," + std::to_string(w.y()) + "," +
             std::to_string(w.z()) + ";";
    train_keys.insert(key);
  }
  for (int i : ds.split_indices("test")) {
    std::string key;
    for (const Vec3& w : ds.frames[i].pose.angles)
      key += std::to_string(w.x()) + "," + std::to_string(w.y()) + "," +
             std::to_string(w.z()) + ";";
    CHECK(train_keys.count(key) == 0);
  }

  // Test cameras shoot from the test radius.
  for (int i : ds.split_indices("test"))
    CHECK(ds.frames[i].camera.center().norm() ==
          doctest::Approx(2.25 * params.test_radius_scale).epsilon(1e-9));
}

TEST_CASE("generate_dataset: regeneration is byte-identical") {
  const FigureSpec spec = chain_figure(2);
  const Pose canonical = rest_pose(spec.skel);
  const GridBox box = default_grid_box(spec.skel, canonical, {10, 10, 10});
  const FigureVolumes fig = make_figure(spec, canonical, box, box);
  const auto poses = sample_poses(spec.skel, 6, 0.5, 5);
  const auto cams = sample_cameras(5, 2.25, 16, 16);
  DatasetParams params;
  params.seed = 11;

  TempDir tmp_a("dsa"), tmp_b("dsb");
  const Dataset a =
      generate_dataset(fig, spec.skel, canonical, poses, cams, tmp_a.str(), params);
  params.render.threads = 3;  // worker count must not matter
  const Dataset b =
      generate_dataset(fig, spec.skel, canonical, poses, cams, tmp_b.str(), params);

  CHECK(file_bytes((tmp_a / "manifest.jsonl").string()) ==
        file_bytes((tmp_b / "manifest.jsonl").string()));
  for (const FrameRecord& f : a.frames) {
    CHECK(file_bytes(a.resolve(f.image)) == file_bytes(b.resolve(f.image)));
    CHECK(file_bytes(a.resolve(f.mask)) == file_bytes(b.resolve(f.mask)));
  }
}

TEST_CASE("generate_dataset: masks equal the alpha support of the renders") {
  TempDir tmp("dsmask");
  const FigureSpec spec = chain_figure(2);
  const Pose canonical = rest_pose(spec.skel);
  const GridBox box = default_grid_box(spec.skel, canonical, {10, 10, 10});
  const FigureVolumes fig = make_figure(spec, canonical, box, box);
  DatasetParams params;
  const Dataset ds = generate_dataset(
      fig, spec.skel, canonical, sample_poses(spec.skel, 3, 0.5, 6),
      sample_cameras(3, 2.25, 16, 16), tmp.str(), params);

  for (int i : ds.split_indices("train")) {
    const FrameRecord& f = ds.frames[i];
    const PosedVolumeView view(
        fig.canonical, fig.weights,
        motion_bases(spec.skel, canonical, f.pose));
    const RenderedImage r = render_image(view, f.camera, params.render);
    const Image mask = read_png(ds.resolve(f.mask));
    for (std::size_t p = 0; p < r.alpha.size(); ++p)
      CHECK((mask.data[p] > 0.5) == (r.alpha[p] > 0.0));
  }
}

TEST_CASE("rigid warp round trip: bases there and back compose to identity") {
  const FigureSpec spec = chain_figure(3, 0.1);
  const Pose canonical = rest_pose(spec.skel);
  const GridBox box = default_grid_box(spec.skel, canonical, {14, 14, 16});
  const FigureVolumes fig = make_figure(spec, canonical, box, box);

  Rng rng(8);
  const Pose target = test::random_pose(spec.skel, rng, 0.5);
  const MotionBasisSet there = motion_bases(spec.skel, canonical, target);
  const MotionBasisSet back = motion_bases(spec.skel, target, canonical);
  MotionBasisSet round(there.size());
  for (std::size_t k = 0; k < there.size(); ++k)
    round[k] = there[k].compose(back[k]);

  const Camera cam = look_at_camera(Vec3(2.0, 0.5, -0.2), Vec3(0, 0, -0.3),
                                    25.6, 25.6, 32, 32);
  const PosedVolumeView identity_view(
      fig.canonical, fig.weights, motion_bases(spec.skel, canonical, canonical));
  const PosedVolumeView round_view(fig.canonical, fig.weights, round);
  const RenderedImage a = render_image(identity_view, cam);
  const RenderedImage b = render_image(round_view, cam);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    sum += d * d;
  }
  CHECK(std::sqrt(sum / a.rgb.size()) < 2.0 / 255.0);
}

TEST_CASE("figure_to_params reproduces the figure through a checkpoint") {
  const FigureSpec spec = chain_figure(2);
  const Pose canonical = rest_pose(spec.skel);
  const GridBox cbox = default_grid_box(spec.skel, canonical, {10, 10, 10});
  const GridBox wbox = default_grid_box(spec.skel, canonical, {8, 8, 8});
  const FigureVolumes fig = make_figure(spec, canonical, cbox, wbox);
  const VoxelGrid prior = gaussian_prior(spec.skel, canonical, wbox);
  const auto [raw, delta] = figure_to_params(fig, prior);

  const VoxelGrid act = activate_canonical(raw);
  for (std::size_t i = 0; i < act.values.size(); ++i)
    CHECK(act.values[i] == doctest::Approx(fig.canonical.values[i])
                               .epsilon(1e-6));
  const VoxelGrid w = weights_from_logits({delta, prior});
  for (std::size_t i = 0; i < w.values.size(); ++i)
    CHECK(std::abs(w.values[i] - fig.weights.values[i]) < 1e-9);
}

TEST_CASE("load_dataset: missing files are reported") {
  TempDir tmp("dsload");
  const FigureSpec spec = chain_figure(2);
  const Pose canonical = rest_pose(spec.skel);
  const GridBox box = default_grid_box(spec.skel, canonical, {8, 8, 8});
  const FigureVolumes fig = make_figure(spec, canonical, box, box);
  DatasetParams params;
  generate_dataset(fig, spec.skel, canonical,
                   sample_poses(spec.skel, 3, 0.5, 9),
                   sample_cameras(3, 2.25, 8, 8), tmp.str(), params);
  const Dataset ok = load_dataset(tmp.str());
  CHECK(ok.frames.size() == 3);
  std::filesystem::remove(ok.resolve(ok.frames[0].image));
  CHECK_THROWS_AS(load_dataset(tmp.str()), IoError);
}

#include "volrig/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>

#include "volrig/filterpipe.hpp"
#include "volrig/fit.hpp"
#include "volrig/synthdata.hpp"

namespace fs = std::filesystem;

namespace volrig::cli {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

// Every flag the subcommands share. Values may come from --config (a JSON
// file keyed by flag name); command-line flags win.
struct Options {
  std::string config;
  std::string skeleton;
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::string poses;
  std::string camera;
  std::string mode = "single";
  std::uint64_t seed = 0;
  int iters = 5000;
  int grid = 24;    // desk-scale preset; the full-scale run uses 128
  int wgrid = 16;   // desk-scale preset; the full-scale run uses 64
  double step = 0.0;
  int n_frames = 36;
  int n_poses = 200;
  int n_cams = 144;
  int size = 64;
  double holdout = 0.1;
  double max_angle = 0.6;
  double radius = 2.25;
  double test_radius = 1.5;
  double lr = 1e-4;
  int batch = 2;
  double l1_weight = 0.1;
  int eval_every = 500;
  int threads = 0;
  bool rgba = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON file with flag defaults");
  cmd->add_option("--seed", o.seed, "PRNG seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--threads", o.threads, "worker threads (0: auto)");
}

// Applies --config values for any flag the user did not pass explicitly.
void apply_config_file(CLI::App& app, Options& o) {
  if (o.config.empty()) return;
  const Json j = read_json_file(o.config);
  auto set_if_default = [&](const std::string& name, auto& field) {
    CLI::Option* opt = app.get_option_no_throw("--" + name);
    if (!j.contains(name)) return;
    if (opt && opt->count() > 0) return;  // explicit flag wins
    try {
      field = j.at(name).get<std::decay_t<decltype(field)>>();
    } catch (const Json::exception& e) {
      throw ConfigError("bad config value for '" + name + "': " + e.what());
    }
  };
  set_if_default("skeleton", o.skeleton);
  set_if_default("dataset", o.dataset);
  set_if_default("checkpoint", o.checkpoint);
  set_if_default("out", o.out);
  set_if_default("poses", o.poses);
  set_if_default("camera", o.camera);
  set_if_default("mode", o.mode);
  set_if_default("seed", o.seed);
  set_if_default("iters", o.iters);
  set_if_default("grid", o.grid);
  set_if_default("wgrid", o.wgrid);
  set_if_default("step", o.step);
  set_if_default("n-frames", o.n_frames);
  set_if_default("n-poses", o.n_poses);
  set_if_default("n-cams", o.n_cams);
  set_if_default("size", o.size);
  set_if_default("holdout", o.holdout);
  set_if_default("max-angle", o.max_angle);
  set_if_default("radius", o.radius);
  set_if_default("test-radius", o.test_radius);
  set_if_default("lr", o.lr);
  set_if_default("batch", o.batch);
  set_if_default("l1-weight", o.l1_weight);
  set_if_default("eval-every", o.eval_every);
  set_if_default("rgba", o.rgba);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void require_file(const std::string& path, const std::string& what) {
  require(!path.empty(), "missing required option: " + what);
  if (!fs::exists(path))
    throw ConfigError(what + " file does not exist: " + path);
}

// Resolved-config echo, written into the output directory before any work.
void echo_config(const Options& o, const std::string& subcommand) {
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw IoError("cannot create output directory: " + o.out);
  Json j{{"subcommand", subcommand},
         {"skeleton", o.skeleton},
         {"dataset", o.dataset},
         {"checkpoint", o.checkpoint},
         {"out", o.out},
         {"poses", o.poses},
         {"camera", o.camera},
         {"mode", o.mode},
         {"seed", o.seed},
         {"iters", o.iters},
         {"grid", o.grid},
         {"wgrid", o.wgrid},
         {"step", o.step},
         {"n-frames", o.n_frames},
         {"n-poses", o.n_poses},
         {"n-cams", o.n_cams},
         {"size", o.size},
         {"holdout", o.holdout},
         {"max-angle", o.max_angle},
         {"radius", o.radius},
         {"test-radius", o.test_radius},
         {"lr", o.lr},
         {"batch", o.batch},
         {"l1-weight", o.l1_weight},
         {"eval-every", o.eval_every},
         {"threads", o.threads},
         {"rgba", o.rgba}};
  write_json_file(j, (fs::path(o.out) / "run_config.json").string());
}

std::array<int, 3> cube(int n) { return {n, n, n}; }

std::vector<Pose> load_pose_file(const std::string& path, int bones) {
  std::vector<Pose> poses;
  for (const Json& j : read_jsonl(path)) {
    Pose p = pose_from_json(j);
    if (p.joint_count() != bones)
      throw ConfigError("bad pose dimension in " + path + ": got " +
                        std::to_string(3 * p.joint_count()) +
                        " angle values, checkpoint expects " +
                        std::to_string(3 * bones));
    poses.push_back(std::move(p));
  }
  if (poses.empty()) throw ConfigError("no poses in " + path);
  return poses;
}

void write_frame_png(const RenderedImage& render, bool rgba,
                     const std::string& path) {
  if (rgba) {
    Image img(render.width, render.height, 4);
    for (std::size_t p = 0; p < render.alpha.size(); ++p) {
      for (int c = 0; c < 3; ++c) img.data[p * 4 + c] = render.rgb[p * 3 + c];
      img.data[p * 4 + 3] = render.alpha[p];
    }
    write_png(img, path);
  } else {
    Image img(render.width, render.height, 3);
    img.data = render.rgb;  // over black
    write_png(img, path);
  }
}

int cmd_synth(const Options& o) {
  require_file(o.skeleton, "--skeleton");
  require(!o.out.empty(), "missing required option: --out");
  echo_config(o, "synth");

  const FigureSpec spec = figure_from_json(read_json_file(o.skeleton));
  const Pose canonical = rest_pose(spec.skel);
  const GridBox cbox = default_grid_box(spec.skel, canonical, cube(o.grid));
  const GridBox wbox = default_grid_box(spec.skel, canonical, cube(o.wgrid));
  const FigureVolumes figure = make_figure(spec, canonical, cbox, wbox);

  const std::vector<Pose> poses =
      sample_poses(spec.skel, o.n_poses, o.max_angle, o.seed);
  const std::vector<Camera> cams =
      sample_cameras(o.n_cams, o.radius, o.size, o.size);

  DatasetParams params;
  params.holdout_poses = o.holdout;
  params.holdout_cams = o.holdout;
  params.test_radius_scale = o.test_radius / o.radius;
  params.seed = o.seed;
  params.render.step = o.step;
  params.render.threads = o.threads;
  const Dataset ds =
      generate_dataset(figure, spec.skel, canonical, poses, cams, o.out, params);

  // Ground-truth checkpoint for oracle rendering and round-trip checks.
  FitContext ctx;
  ctx.skel = spec.skel;
  ctx.canonical = canonical;
  ctx.prior = gaussian_prior(spec.skel, canonical, wbox);
  ctx.step = o.step > 0.0 ? o.step : 0.5 * cbox.min_voxel_edge();
  ctx.step_ref = cbox.min_voxel_edge();
  ctx.threads = o.threads;
  auto [raw, delta] = figure_to_params(figure, ctx.prior);
  FitParams gt{std::move(raw), std::move(delta)};
  write_checkpoint((fs::path(o.out) / "gt_checkpoint").string(), gt, ctx,
                   Json{{"source", "ground-truth figure"}});

  const auto train = ds.split_indices("train");
  const auto test = ds.split_indices("test");
  std::cout << "train=" << train.size() << " test=" << test.size() << "\n";
  return kExitOk;
}

int cmd_fit(const Options& o) {
  require(!o.dataset.empty(), "missing required option: --dataset");
  require(!o.out.empty(), "missing required option: --out");
  require(fs::exists(o.dataset), "dataset does not exist: " + o.dataset);
  echo_config(o, "fit");

  const Dataset ds = load_dataset(o.dataset);
  FitConfig cfg;
  cfg.iterations = o.iters;
  cfg.batch_size = o.batch;
  cfg.lr = o.lr;
  cfg.l1_weight = o.l1_weight;
  cfg.seed = o.seed;
  cfg.eval_every = o.eval_every;
  cfg.canonical_dims = cube(o.grid);
  cfg.weight_dims = cube(o.wgrid);
  cfg.step = o.step;
  cfg.threads = o.threads;

  const std::string ckpt_dir = (fs::path(o.out) / "checkpoint").string();
  const std::string log_path = (fs::path(o.out) / "fit.log").string();
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot open for writing: " + log_path);

  FitResult result;
  try {
    result = fit(ds, cfg, [&](int iter, const FitParams& p, const FitContext& c) {
      write_checkpoint(ckpt_dir, p, c, Json{{"iteration", iter}});
    });
  } catch (const NumericError& e) {
    // The checkpoint from the last evaluation cadence survives on disk.
    std::cerr << "fit diverged: " << e.what() << "\n";
    return kExitNumeric;
  }

  for (const FitLogEntry& e : result.log) {
    log << e.iteration << ',' << e.loss << ',';
    if (e.psnr_eval) log << *e.psnr_eval;
    log << '\n';
  }
  write_checkpoint(ckpt_dir, result.params, result.ctx,
                   Json{{"iteration", cfg.iterations}});

  if (!result.log.empty() && result.log.back().psnr_eval)
    std::cout << "final eval psnr=" << *result.log.back().psnr_eval << "\n";
  std::cout << "checkpoint=" << ckpt_dir << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o) {
  require(!o.checkpoint.empty(), "missing required option: --checkpoint");
  require(!o.dataset.empty(), "missing required option: --dataset");
  if (!o.out.empty()) echo_config(o, "eval");

  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const Dataset ds = load_dataset(o.dataset);
  const EvalResult r = evaluate(ck.params, ds, ck.ctx);
  std::cout << "psnr=" << r.psnr << " mse=" << r.mse << " frames=" << r.frames
            << "\n";
  if (!o.out.empty())
    write_json_file(Json{{"psnr", r.psnr}, {"mse", r.mse}, {"frames", r.frames}},
                    (fs::path(o.out) / "eval.json").string());
  return kExitOk;
}

int cmd_render(const Options& o) {
  require(!o.checkpoint.empty(), "missing required option: --checkpoint");
  require(!o.out.empty(), "missing required option: --out");
  require(o.mode == "single" || o.mode == "retarget" || o.mode == "turntable",
          "unknown render mode: " + o.mode);
  echo_config(o, "render");

  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const ModelVolumes model = derive_volumes(ck.params, ck.ctx);
  const int bones = ck.ctx.skel.bone_count();

  std::vector<Pose> poses;
  if (!o.poses.empty()) {
    require_file(o.poses, "--poses");
    poses = load_pose_file(o.poses, bones);
  } else {
    poses.push_back(ck.ctx.canonical);
  }

  Camera cam;
  if (!o.camera.empty()) {
    require_file(o.camera, "--camera");
    cam = camera_from_json(read_json_file(o.camera));
  } else {
    cam = look_at_camera(Vec3(o.radius, 0.0, 0.0), Vec3::Zero(),
                         0.8 * o.size, 0.8 * o.size, o.size, o.size);
  }

  RenderOptions ropts;
  ropts.step = o.step > 0.0 ? o.step : ck.ctx.step;
  ropts.step_ref = ck.ctx.step_ref;
  ropts.threads = o.threads;

  auto render_one = [&](const Pose& pose, const Camera& camera, int index) {
    const PosedVolumeView view(
        model.activated, model.weights,
        motion_bases(ck.ctx.skel, ck.ctx.canonical, pose));
    const RenderedImage img = render_image(view, camera, ropts);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.png", index);
    write_frame_png(img, o.rgba, (fs::path(o.out) / name).string());
  };

  if (o.mode == "single") {
    render_one(poses.front(), cam, 0);
  } else if (o.mode == "retarget") {
    for (std::size_t i = 0; i < poses.size(); ++i)
      render_one(poses[i], cam, static_cast<int>(i));
  } else {  // turntable: fixed pose, cameras on a circle about the subject
    require(o.n_frames >= 1, "--n-frames must be positive");
    for (int i = 0; i < o.n_frames; ++i) {
      const double azimuth = 2.0 * std::numbers::pi * i / o.n_frames;
      const Vec3 eye(o.radius * std::cos(azimuth),
                     o.radius * std::sin(azimuth), 0.0);
      render_one(poses.front(),
                 look_at_camera(eye, Vec3::Zero(), 0.8 * o.size, 0.8 * o.size,
                                o.size, o.size),
                 i);
    }
  }
  return kExitOk;
}

int cmd_filter(const Options& o) {
  require(!o.dataset.empty(), "missing required option: --dataset");
  require(!o.out.empty(), "missing required option: --out");
  echo_config(o, "filter");

  const std::string manifest_path =
      (fs::path(o.dataset) / "manifest.jsonl").string();
  const std::vector<Json> records = read_jsonl(manifest_path);

  FilterConfig cfg;
  std::vector<FilterInput> inputs;
  inputs.reserve(records.size());
  for (const Json& rec : records) {
    FilterInput in;
    in.frame_id = rec.value("image", "frame_" + std::to_string(inputs.size()));
    if (!rec.contains("annotations")) {
      in.missing = true;
    } else {
      const std::string ann_path =
          (fs::path(o.dataset) / rec.at("annotations").get<std::string>())
              .string();
      try {
        in.ann = annotations_from_json(read_json_file(ann_path), o.dataset);
      } catch (const std::exception&) {
        in.missing = true;
      }
    }
    inputs.push_back(std::move(in));
  }

  const FilterReport report = filter_dataset(inputs, cfg);

  std::vector<Json> kept;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (report.decisions[i].kept) kept.push_back(records[i]);
  write_jsonl(kept, (fs::path(o.out) / "manifest.jsonl").string());

  std::ofstream rep((fs::path(o.out) / "report.csv").string());
  if (!rep) throw IoError("cannot write the filter report");
  for (const std::string& line : report.report_lines()) rep << line << '\n';

  std::cout << "kept=" << report.kept << " missing=" << report.dropped_missing
            << " invalid=" << report.dropped_invalid
            << " full_body=" << report.dropped_full_body
            << " pose_consistency=" << report.dropped_pose
            << " silhouette=" << report.dropped_silhouette << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"posable volumetric character reconstruction"};
  app.require_subcommand(1);
  Options o;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--skeleton", o.skeleton, "skeleton config (json)");
  synth->add_option("--n-poses", o.n_poses, "number of poses");
  synth->add_option("--n-cams", o.n_cams, "number of cameras on the sphere");
  synth->add_option("--holdout", o.holdout, "held-out fraction of poses/cameras");
  synth->add_option("--size", o.size, "image width and height");
  synth->add_option("--max-angle", o.max_angle, "pose angle range (radians)");
  synth->add_option("--radius", o.radius, "training camera radius");
  synth->add_option("--test-radius", o.test_radius, "test camera radius");
  synth->add_option("--grid", o.grid, "canonical grid resolution");
  synth->add_option("--wgrid", o.wgrid, "weight grid resolution");
  synth->add_option("--step", o.step, "ray march step (world units)");

  CLI::App* fitc = app.add_subcommand("fit", "fit a model to a dataset");
  fitc->add_option("--dataset", o.dataset, "dataset directory");
  fitc->add_option("--iters", o.iters, "adam iterations");
  fitc->add_option("--lr", o.lr, "learning rate");
  fitc->add_option("--batch", o.batch, "frames per iteration");
  fitc->add_option("--l1-weight", o.l1_weight, "foreground L1 weight");
  fitc->add_option("--grid", o.grid, "canonical grid resolution");
  fitc->add_option("--wgrid", o.wgrid, "weight grid resolution");
  fitc->add_option("--step", o.step, "ray march step (world units)");
  fitc->add_option("--eval-every", o.eval_every, "evaluation cadence");

  CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
  evalc->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
  evalc->add_option("--dataset", o.dataset, "dataset directory");

  CLI::App* render = app.add_subcommand("render", "render a checkpoint");
  render->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
  render->add_option("--mode", o.mode, "single | retarget | turntable");
  render->add_option("--poses", o.poses, "pose sequence file (jsonl)");
  render->add_option("--camera", o.camera, "camera record (json)");
  render->add_option("--n-frames", o.n_frames, "turntable camera count");
  render->add_option("--radius", o.radius, "default camera radius");
  render->add_option("--size", o.size, "image width and height");
  render->add_option("--step", o.step, "ray march step (world units)");
  render->add_flag("--rgba", o.rgba, "write RGBA instead of RGB");

  CLI::App* filter = app.add_subcommand("filter", "filter frames by annotations");
  filter->add_option("--dataset", o.dataset, "dataset directory with manifest");

  for (CLI::App* cmd : {synth, fitc, evalc, render, filter}) add_common(cmd, o);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    apply_config_file(app, o);
    if (synth->parsed()) return cmd_synth(o);
    if (fitc->parsed()) return cmd_fit(o);
    if (evalc->parsed()) return cmd_eval(o);
    if (render->parsed()) return cmd_render(o);
    if (filter->parsed()) return cmd_filter(o);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace volrig::cli

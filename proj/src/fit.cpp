#include "volrig/fit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "volrig/parallel.hpp"
#include "volrig/rng.hpp"

namespace fs = std::filesystem;

namespace volrig {

RenderOptions FitContext::render_options(bool early_stop) const {
  RenderOptions o;
  o.step = step;
  o.step_ref = step_ref;
  o.early_stop = early_stop;
  o.threads = threads;
  return o;
}

void FitConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (l1_weight < 0.0) throw ConfigError("loss weights must be non-negative");
}

double loss_l2(const std::vector<double>& rendered,
               const std::vector<double>& truth) {
  if (rendered.size() != truth.size())
    throw ConfigError("image dimensions do not match");
  double sum = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double d = rendered[i] - truth[i];
    sum += d * d;
  }
  return sum;
}

double loss_l1(const std::vector<double>& rendered,
               const std::vector<double>& truth,
               const std::vector<double>& fg_mask) {
  if (rendered.size() != truth.size() || rendered.size() != fg_mask.size() * 3)
    throw ConfigError("image dimensions do not match");
  double sum = 0.0;
  for (std::size_t p = 0; p < fg_mask.size(); ++p) {
    if (fg_mask[p] <= 0.5) continue;
    for (int c = 0; c < 3; ++c)
      sum += std::abs(rendered[p * 3 + c] - truth[p * 3 + c]);
  }
  return sum;
}

namespace {

constexpr int kReduceBlocks = 16;  // fixed so results don't depend on workers

struct SampleRec {
  Vec3 x;
  std::array<double, 4> s;
  double a;
  double transmit;  // before this sample
};

// Scatters the per-sample adjoint into the dense activation and weight
// buffers. grad_rgb/grad_alpha are d(loss)/d(sample_target components).
void adjoint_sample(const PosedVolumeView& view, const Vec3& x,
                    const Vec3& grad_rgb, double grad_alpha,
                    std::vector<double>& d_act, std::vector<double>& d_w) {
  const int bones = view.bone_count();
  std::array<double, kMaxBones> s;
  const double sum = view.bone_supports(x, s.data());
  if (sum < kZeroSupport) return;  // the empty branch is locally constant

  std::array<Vec3, kMaxBones> b;
  Vec3 y = Vec3::Zero();
  for (int i = 0; i < bones; ++i) {
    b[i] = view.bases()[i].apply(x);
    y += (s[i] / sum) * b[i];
  }

  TrilinearStencil stc;
  if (!make_stencil(view.canonical().box, y, stc))
    return;  // out-of-grid canonical sample: contribution dropped

  const double mask = std::min(sum, 1.0);
  double c4[4];
  for (int c = 0; c < 4; ++c) c4[c] = stencil_sample(view.canonical(), stc, c);

  const double g4[4] = {mask * grad_rgb.x(), mask * grad_rgb.y(),
                        mask * grad_rgb.z(), mask * grad_alpha};
  double grad_mask = grad_rgb.x() * c4[0] + grad_rgb.y() * c4[1] +
                     grad_rgb.z() * c4[2] + grad_alpha * c4[3];
  if (sum >= 1.0) grad_mask = 0.0;  // clamp subgradient

  Vec3 grad_y = Vec3::Zero();
  for (int corner = 0; corner < 8; ++corner) {
    const std::int64_t base = stc.corner[corner] * 4;
    double vdot[3] = {0, 0, 0};
    for (int c = 0; c < 4; ++c) {
      d_act[base + c] += stc.weight[corner] * g4[c];
      const double v = view.canonical().values[base + c];
      vdot[0] += g4[c] * v * stc.dweight[corner][0];
      vdot[1] += g4[c] * v * stc.dweight[corner][1];
      vdot[2] += g4[c] * v * stc.dweight[corner][2];
    }
    grad_y += Vec3(vdot[0], vdot[1], vdot[2]);
  }

  const int wc = bones + 1;
  for (int i = 0; i < bones; ++i) {
    // s_i feeds the mask and, through the normalization, the warp point.
    const double g_si = grad_mask + grad_y.dot(b[i] - y) / sum;
    if (g_si == 0.0) continue;
    TrilinearStencil stw;
    if (!make_stencil(view.weights().box, b[i], stw)) continue;
    for (int corner = 0; corner < 8; ++corner)
      d_w[stw.corner[corner] * wc + i] += stw.weight[corner] * g_si;
  }
}

// Forward render + reverse sweep for every pixel of one frame, accumulating
// into fixed row-block buffers that are merged in block order.
double backward_frame(const PosedVolumeView& view, const FrameSample& frame,
                      const Vec3& bg, double step, double step_ref,
                      double l1_weight, int threads, std::vector<double>& d_act,
                      std::vector<double>& d_w) {
  const Camera& cam = frame.camera;
  if (frame.image.width != cam.width || frame.image.height != cam.height ||
      frame.mask.width != cam.width || frame.mask.height != cam.height)
    throw ConfigError("frame image dimensions do not match its camera");

  const int blocks = std::min(kReduceBlocks, cam.height);
  std::vector<std::vector<double>> block_act(blocks), block_w(blocks);
  std::vector<double> block_loss(blocks, 0.0);
  const double opacity_scale = step / step_ref;

  run_blocks(blocks, threads, [&](int blk) {
    auto& a_buf = block_act[blk];
    auto& w_buf = block_w[blk];
    a_buf.assign(d_act.size(), 0.0);
    w_buf.assign(d_w.size(), 0.0);
    std::vector<SampleRec> recs;
    double loss = 0.0;

    const int y0 = blk * cam.height / blocks;
    const int y1 = (blk + 1) * cam.height / blocks;
    for (int py = y0; py < y1; ++py)
      for (int px = 0; px < cam.width; ++px) {
        const Ray ray =
            generate_ray(cam, px, py, view.march_min(), view.march_max());
        recs.clear();
        const MarchResult r = march_ray_emit(
            view, ray, step, step_ref, /*early_stop=*/false,
            [&](const Vec3& x, const std::array<double, 4>& s, double a,
                double transmit) { recs.push_back({x, s, a, transmit}); });

        const bool fg = frame.mask.at(px, py) > 0.5;
        Vec3 d_color;  // d(loss)/d(composited pixel)
        double d_alpha = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double out = r.rgb[c] + (1.0 - r.alpha) * bg[c];
          const double truth = frame.image.at(px, py, c) + (fg ? 0.0 : bg[c]);
          const double diff = out - truth;
          loss += diff * diff;
          double g = 2.0 * diff;
          if (fg && l1_weight > 0.0) {
            loss += l1_weight * std::abs(diff);
            g += l1_weight * (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0));
          }
          d_color[c] = g;
          d_alpha -= g * bg[c];
        }

        // Reverse sweep with suffix accumulators: suffix_color and
        // suffix_alpha are what a unit of transmittance at sample m+1
        // would still collect.
        Vec3 suffix_color = Vec3::Zero();
        double suffix_alpha = 0.0;
        for (int m = static_cast<int>(recs.size()) - 1; m >= 0; --m) {
          const SampleRec& rec = recs[m];
          const Vec3 color(rec.s[0], rec.s[1], rec.s[2]);
          const Vec3 grad_rgb = rec.transmit * rec.a * d_color;
          const double grad_a =
              rec.transmit * (d_color.dot(color - suffix_color) +
                              d_alpha * (1.0 - suffix_alpha));
          const double sa = rec.s[3] * opacity_scale;
          const double grad_salpha =
              (sa > 0.0 && sa < 1.0) ? grad_a * opacity_scale : 0.0;
          if (grad_rgb.squaredNorm() != 0.0 || grad_salpha != 0.0)
            adjoint_sample(view, rec.x, grad_rgb, grad_salpha, a_buf, w_buf);
          suffix_color = rec.a * color + (1.0 - rec.a) * suffix_color;
          suffix_alpha = rec.a + (1.0 - rec.a) * suffix_alpha;
        }
      }
    block_loss[blk] = loss;
  });

  double loss = 0.0;
  for (int blk = 0; blk < blocks; ++blk) {
    loss += block_loss[blk];
    for (std::size_t i = 0; i < d_act.size(); ++i) d_act[i] += block_act[blk][i];
    for (std::size_t i = 0; i < d_w.size(); ++i) d_w[i] += block_w[blk][i];
  }
  return loss;
}

// Pulls the activation/weight-space gradients back to the raw parameters:
// softplus (with the alpha clamp gate) and the per-voxel softmax Jacobian.
FitGradients convert_gradients(const FitParams& params, const VoxelGrid& w,
                               const std::vector<double>& d_act,
                               const std::vector<double>& d_w) {
  FitGradients g;
  g.raw_canonical = VoxelGrid(params.raw_canonical.box, 4);
  g.delta_w = VoxelGrid(params.delta_w.box, params.delta_w.channels);

  const std::int64_t nc = params.raw_canonical.box.voxel_count();
  for (std::int64_t v = 0; v < nc; ++v) {
    const std::int64_t base = v * 4;
    for (int c = 0; c < 4; ++c) {
      const double raw = params.raw_canonical.values[base + c];
      double deriv = sigmoid(raw);
      if (c == 3 && softplus(raw) >= 1.0) deriv = 0.0;
      g.raw_canonical.values[base + c] = d_act[base + c] * deriv;
    }
  }

  const int wc = params.delta_w.channels;
  const std::int64_t nw = params.delta_w.box.voxel_count();
  for (std::int64_t v = 0; v < nw; ++v) {
    const std::int64_t base = v * wc;
    double dot = 0.0;
    for (int c = 0; c < wc; ++c) dot += d_w[base + c] * w.values[base + c];
    for (int c = 0; c < wc; ++c)
      g.delta_w.values[base + c] =
          w.values[base + c] * (d_w[base + c] - dot);
  }
  return g;
}

Vec3 background_color(std::uint64_t seed, int frame_index, int iteration) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(frame_index),
                      static_cast<std::uint64_t>(iteration), 0xB6C0));
  return Vec3(rng.uniform(), rng.uniform(), rng.uniform());
}

}  // namespace

BackwardResult backward(const FitParams& params, const FrameSample& frame,
                        const Vec3& background, const FitContext& ctx,
                        double l1_weight) {
  const VoxelGrid act = activate_canonical(params.raw_canonical);
  const VoxelGrid w = weights_from_logits({params.delta_w, ctx.prior});
  const PosedVolumeView view(act, w,
                             motion_bases(ctx.skel, ctx.canonical, frame.pose));
  const RenderOptions o = ctx.render_options(false).resolved(view);

  std::vector<double> d_act(act.values.size(), 0.0);
  std::vector<double> d_w(w.values.size(), 0.0);
  BackwardResult result;
  result.loss = backward_frame(view, frame, background, o.step, o.step_ref,
                               l1_weight, o.threads, d_act, d_w);
  if (!std::isfinite(result.loss))
    throw NumericError("non-finite loss in backward pass");
  result.grads = convert_gradients(params, w, d_act, d_w);
  return result;
}

AdamState AdamState::init(const FitParams& params, double lr) {
  AdamState s;
  s.lr = lr;
  s.m_canonical.assign(params.raw_canonical.values.size(), 0.0);
  s.v_canonical.assign(params.raw_canonical.values.size(), 0.0);
  s.m_delta.assign(params.delta_w.values.size(), 0.0);
  s.v_delta.assign(params.delta_w.values.size(), 0.0);
  return s;
}

void adam_step(AdamState& state, FitParams& params, const FitGradients& grads) {
  if (grads.raw_canonical.values.size() != params.raw_canonical.values.size() ||
      grads.delta_w.values.size() != params.delta_w.values.size())
    throw ConfigError("gradient shapes do not match the parameters");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, state.t);
  const double bc2 = 1.0 - std::pow(state.beta2, state.t);
  auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                    std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  };
  update(params.raw_canonical.values, grads.raw_canonical.values,
         state.m_canonical, state.v_canonical);
  update(params.delta_w.values, grads.delta_w.values, state.m_delta,
         state.v_delta);
}

FitResult fit(const Dataset& dataset, const FitConfig& cfg,
              const FitCallback& on_eval) {
  cfg.validate();
  const std::vector<int> train = dataset.split_indices("train");
  const std::vector<int> test = dataset.split_indices("test");
  if (train.empty()) throw ConfigError("empty dataset: no training frames");

  FitResult result;
  FitContext& ctx = result.ctx;
  ctx.skel = dataset.skel;
  ctx.canonical = dataset.canonical;
  const GridBox cbox =
      default_grid_box(ctx.skel, ctx.canonical, cfg.canonical_dims);
  const GridBox wbox =
      default_grid_box(ctx.skel, ctx.canonical, cfg.weight_dims);
  ctx.prior = gaussian_prior(ctx.skel, ctx.canonical, wbox);
  ctx.step = cfg.step > 0.0 ? cfg.step : 0.5 * cbox.min_voxel_edge();
  ctx.step_ref = cfg.step_ref > 0.0 ? cfg.step_ref : cbox.min_voxel_edge();
  ctx.threads = cfg.threads;

  FitParams& params = result.params;
  params.raw_canonical = VoxelGrid(cbox, 4, softplus_inv(0.01));
  params.delta_w = VoxelGrid(wbox, ctx.skel.bone_count() + 1, 0.0);

  std::vector<FrameSample> samples(dataset.frames.size());
  for (int i : train) {
    FrameSample& s = samples[i];
    s.frame_index = i;
    s.pose = dataset.frames[i].pose;
    s.camera = dataset.frames[i].camera;
    s.image = read_png(dataset.resolve(dataset.frames[i].image));
    s.mask = read_png(dataset.resolve(dataset.frames[i].mask));
    if (s.image.channels != 3)
      throw IoError("expected an RGB image: " + dataset.frames[i].image);
    if (s.mask.channels != 1)
      throw IoError("expected a grayscale mask: " + dataset.frames[i].mask);
  }

  AdamState adam = AdamState::init(params, cfg.lr);
  std::vector<double> d_act(params.raw_canonical.values.size());
  std::vector<double> d_w(params.delta_w.values.size());

  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    const VoxelGrid act = activate_canonical(params.raw_canonical);
    const VoxelGrid w = weights_from_logits({params.delta_w, ctx.prior});

    std::fill(d_act.begin(), d_act.end(), 0.0);
    std::fill(d_w.begin(), d_w.end(), 0.0);
    double loss = 0.0;

    Rng batch_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(iter), 0,
                              0xBA7C));
    for (int j = 0; j < cfg.batch_size; ++j) {
      const int fi = train[batch_rng.uniform_index(train.size())];
      const FrameSample& frame = samples[fi];
      const Vec3 bg = background_color(cfg.seed, fi, iter);
      const PosedVolumeView view(
          act, w, motion_bases(ctx.skel, ctx.canonical, frame.pose));
      const RenderOptions o = ctx.render_options(false).resolved(view);
      loss += backward_frame(view, frame, bg, o.step, o.step_ref,
                             cfg.l1_weight, o.threads, d_act, d_w);
    }
    if (!std::isfinite(loss))
      throw NumericError("loss diverged at iteration " + std::to_string(iter));

    const FitGradients grads = convert_gradients(params, w, d_act, d_w);
    adam_step(adam, params, grads);

    FitLogEntry entry;
    entry.iteration = iter;
    entry.loss = loss;
    const bool eval_now = cfg.eval_every > 0 && !test.empty() &&
                          (iter % cfg.eval_every == 0 || iter == cfg.iterations);
    if (eval_now) {
      entry.psnr_eval = evaluate(params, dataset, ctx).psnr;
      if (on_eval) on_eval(iter, params, ctx);
    }
    result.log.push_back(entry);
  }
  return result;
}

double psnr_from_mse(double mse) {
  if (mse < 0.0) throw std::invalid_argument("mse must be non-negative");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

EvalResult evaluate_view(const VoxelGrid& activated, const VoxelGrid& weights,
                         const Dataset& ds, const std::vector<int>& frame_idx,
                         const FitContext& ctx) {
  if (frame_idx.empty()) throw ConfigError("empty evaluation set");
  double total = 0.0;
  std::int64_t count = 0;
  for (int i : frame_idx) {
    const FrameRecord& f = ds.frames[i];
    const PosedVolumeView view(activated, weights,
                               motion_bases(ctx.skel, ctx.canonical, f.pose));
    const RenderedImage r =
        render_image(view, f.camera, ctx.render_options(true));
    const Image truth = read_png(ds.resolve(f.image));
    if (truth.width != r.width || truth.height != r.height ||
        truth.channels != 3)
      throw IoError("stored image does not match the camera: " + f.image);
    // Both sides on the 8-bit scale over the storage background (black).
    for (std::size_t p = 0; p < r.rgb.size(); ++p) {
      const double got = std::lround(std::clamp(r.rgb[p], 0.0, 1.0) * 255.0);
      const double want = std::lround(truth.data[p] * 255.0);
      total += (got - want) * (got - want);
      ++count;
    }
  }
  EvalResult out;
  out.mse = total / static_cast<double>(count);
  out.psnr = psnr_from_mse(out.mse);
  out.frames = static_cast<int>(frame_idx.size());
  return out;
}

EvalResult evaluate(const FitParams& params, const Dataset& ds,
                    const FitContext& ctx) {
  const std::vector<int> test = ds.split_indices("test");
  if (test.empty()) throw ConfigError("empty test set");
  const ModelVolumes model = derive_volumes(params, ctx);
  return evaluate_view(model.activated, model.weights, ds, test, ctx);
}

void write_checkpoint(const std::string& dir, const FitParams& params,
                      const FitContext& ctx, const Json& extra) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory: " + dir);
  write_volume(params.raw_canonical, (fs::path(dir) / "raw_canonical.vol").string());
  write_volume(params.delta_w, (fs::path(dir) / "delta_w.vol").string());
  Json config = {{"skeleton", skeleton_to_json(ctx.skel)},
                 {"canonical_pose", pose_to_json(ctx.canonical)},
                 {"step", ctx.step},
                 {"step_ref", ctx.step_ref}};
  for (auto it = extra.begin(); it != extra.end(); ++it)
    config[it.key()] = it.value();
  write_json_file(config, (fs::path(dir) / "config.json").string());
}

Checkpoint load_checkpoint(const std::string& dir) {
  Checkpoint ck;
  ck.config = read_json_file((fs::path(dir) / "config.json").string());
  ck.params.raw_canonical =
      read_volume((fs::path(dir) / "raw_canonical.vol").string());
  ck.params.delta_w = read_volume((fs::path(dir) / "delta_w.vol").string());
  ck.ctx.skel = skeleton_from_json(ck.config.at("skeleton"));
  ck.ctx.canonical = pose_from_json(ck.config.at("canonical_pose"));
  if (ck.params.delta_w.channels != ck.ctx.skel.bone_count() + 1)
    throw ConfigError("checkpoint weight volume does not match the skeleton");
  ck.ctx.prior =
      gaussian_prior(ck.ctx.skel, ck.ctx.canonical, ck.params.delta_w.box);
  ck.ctx.step = ck.config.value("step", 0.0);
  ck.ctx.step_ref = ck.config.value("step_ref", 0.0);
  return ck;
}

ModelVolumes derive_volumes(const FitParams& params, const FitContext& ctx) {
  ModelVolumes model;
  model.activated = activate_canonical(params.raw_canonical);
  model.weights = weights_from_logits({params.delta_w, ctx.prior});
  return model;
}

}  // namespace volrig

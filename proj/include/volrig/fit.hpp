#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "volrig/image.hpp"
#include "volrig/render.hpp"
#include "volrig/synthdata.hpp"
#include "volrig/weights.hpp"

namespace volrig {

/// The free variables of the reconstruction: a pre-softplus RGBA volume and
/// the weight-logit offsets over the Gaussian prior.
struct FitParams {
  VoxelGrid raw_canonical;
  VoxelGrid delta_w;
};

struct FitGradients {
  VoxelGrid raw_canonical;
  VoxelGrid delta_w;
};

/// Everything held fixed while fitting: skeleton, canonical pose, the
/// weight prior and the march step configuration.
struct FitContext {
  Skeleton skel;
  Pose canonical;
  VoxelGrid prior;
  double step = 0.0;
  double step_ref = 0.0;
  int threads = 0;

  RenderOptions render_options(bool early_stop) const;
};

struct AdamState {
  std::vector<double> m_canonical, v_canonical, m_delta, v_delta;
  long t = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(const FitParams& params, double lr);
};

struct FitConfig {
  int iterations = 5000;
  int batch_size = 2;
  double lr = 1e-4;
  double l1_weight = 0.1;  // L1 on foreground pixels; 0 disables
  std::uint64_t seed = 0;
  int eval_every = 500;  // 0: no periodic evaluation
  std::array<int, 3> canonical_dims = {128, 128, 128};
  std::array<int, 3> weight_dims = {64, 64, 64};
  double step = 0.0;      // 0: half canonical voxel edge
  double step_ref = 0.0;  // 0: one canonical voxel edge
  int threads = 0;

  void validate() const;
};

/// One training observation kept in memory.
struct FrameSample {
  int frame_index = 0;  // index into the manifest, seeds the background
  Pose pose;
  Camera camera;
  Image image;  // RGB over black
  Image mask;   // binary foreground
};

double loss_l2(const std::vector<double>& rendered,
               const std::vector<double>& truth);

double loss_l1(const std::vector<double>& rendered,
               const std::vector<double>& truth,
               const std::vector<double>& fg_mask);

struct BackwardResult {
  double loss = 0.0;
  FitGradients grads;
};

/// Loss and exact gradients for one frame: the adjoint of
/// loss(composite(march(sample_target(...)))) through the softplus
/// activation, the weight softmax, both trilinear interpolations and the
/// normalized-weight warp. Rendering runs in differentiable mode (no early
/// stop). Deterministic for any thread count.
BackwardResult backward(const FitParams& params, const FrameSample& frame,
                        const Vec3& background, const FitContext& ctx,
                        double l1_weight);

/// Standard Adam with bias correction, applied in place.
void adam_step(AdamState& state, FitParams& params, const FitGradients& grads);

struct FitLogEntry {
  int iteration = 0;
  double loss = 0.0;
  std::optional<double> psnr_eval;
};

struct FitResult {
  FitParams params;
  FitContext ctx;
  std::vector<FitLogEntry> log;
};

using FitCallback =
    std::function<void(int iteration, const FitParams&, const FitContext&)>;

/// Minibatch Adam over the training split. Starts from
/// raw_canonical = softplus_inv(0.01) and delta_w = 0, draws a solid
/// background color per (seed, frame, iteration) and composites both the
/// rendering and the masked ground truth over it.
FitResult fit(const Dataset& dataset, const FitConfig& cfg,
              const FitCallback& on_eval = nullptr);

/// 10*log10(255^2 / mse); +infinity for mse = 0, throws below 0.
double psnr_from_mse(double mse);

struct EvalResult {
  double psnr = 0.0;
  double mse = 0.0;
  int frames = 0;
};

/// Renders the given frames over the storage background (black), quantizes
/// to 8 bits and averages the squared error against the stored images.
EvalResult evaluate_view(const VoxelGrid& activated, const VoxelGrid& weights,
                         const Dataset& ds, const std::vector<int>& frame_idx,
                         const FitContext& ctx);

/// Evaluation of fitted parameters on the dataset's test split.
EvalResult evaluate(const FitParams& params, const Dataset& ds,
                    const FitContext& ctx);

/// Checkpoint: two volume files plus a config echo.
void write_checkpoint(const std::string& dir, const FitParams& params,
                      const FitContext& ctx, const Json& extra = Json::object());

struct Checkpoint {
  FitParams params;
  FitContext ctx;
  Json config;
};

Checkpoint load_checkpoint(const std::string& dir);

/// Derived grids for rendering a checkpoint.
struct ModelVolumes {
  VoxelGrid activated;
  VoxelGrid weights;
};

ModelVolumes derive_volumes(const FitParams& params, const FitContext& ctx);

}  // namespace volrig

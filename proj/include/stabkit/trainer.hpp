#pragma once

// Mini-batch Adam training loop over synthetic clips, plus the matching
// validation pass. Every random choice is re-derived from (seed, iteration),
// so a run resumed from a checkpoint continues bit-for-bit as if it had
// never stopped.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stabkit/datagen.hpp"
#include "stabkit/engine.hpp"
#include "stabkit/losses.hpp"
#include "stabkit/metrics.hpp"
#include "stabkit/network.hpp"

namespace stabkit {

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

namespace detail {

inline void adam_block(double* p, const double* g, double* m, double* v,
                       std::size_t n, double lr, const AdamParams& ap,
                       double b1c, double b2c) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = ap.beta1 * m[i] + (1.0 - ap.beta1) * g[i];
    v[i] = ap.beta2 * v[i] + (1.0 - ap.beta2) * g[i] * g[i];
    p[i] -= lr * (m[i] / b1c) / (std::sqrt(v[i] / b2c) + ap.epsilon);
  }
}

}  // namespace detail

// One Adam step over a flat parameter vector. Moment buffers are sized on
// first use and must keep matching afterwards.
inline void adam_step(std::vector<double>& params,
                      const std::vector<double>& grads, AdamState& state,
                      double lr, const AdamParams& ap = {}) {
  if (params.size() != grads.size())
    throw ConfigError("adam_step: parameter/gradient size mismatch");
  if (state.m.empty()) state.m.assign(params.size(), 0.0);
  if (state.v.empty()) state.v.assign(params.size(), 0.0);
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ConfigError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double b1c = 1.0 - std::pow(ap.beta1, static_cast<double>(state.step));
  const double b2c = 1.0 - std::pow(ap.beta2, static_cast<double>(state.step));
  detail::adam_block(params.data(), grads.data(), state.m.data(),
                     state.v.data(), params.size(), lr, ap, b1c, b2c);
}

// One Adam step over a whole network. Moments are stored flat, covering the
// parameter blocks in their canonical visiting order.
inline void adam_step(NetworkParams& params, const NetworkGradients& grads,
                      AdamState& state, double lr, const AdamParams& ap = {}) {
  std::vector<std::vector<double>*> pb;
  std::vector<const std::vector<double>*> gb;
  visit_param_blocks(params, [&](std::vector<double>& b) { pb.push_back(&b); });
  visit_param_blocks(grads,
                     [&](const std::vector<double>& b) { gb.push_back(&b); });
  if (pb.size() != gb.size())
    throw ConfigError("adam_step: parameter/gradient block count mismatch");
  std::size_t total = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    if (pb[i]->size() != gb[i]->size())
      throw ConfigError("adam_step: parameter/gradient block size mismatch");
    total += pb[i]->size();
  }
  if (state.m.empty()) state.m.assign(total, 0.0);
  if (state.v.empty()) state.v.assign(total, 0.0);
  if (state.m.size() != total || state.v.size() != total)
    throw ConfigError("adam_step: optimizer state does not match the network");
  ++state.step;
  const double b1c = 1.0 - std::pow(ap.beta1, static_cast<double>(state.step));
  const double b2c = 1.0 - std::pow(ap.beta2, static_cast<double>(state.step));
  std::size_t off = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    detail::adam_block(pb[i]->data(), gb[i]->data(), state.m.data() + off,
                       state.v.data() + off, pb[i]->size(), lr, ap, b1c, b2c);
    off += pb[i]->size();
  }
}

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

// History frames during training are ground-truth steady renders disturbed
// by a small random warp, so the model learns to tolerate the imperfect
// history it will produce for itself at inference time. The disturbance is
// deliberately mild; large warps would destroy the history signal entirely.
inline PerturbationRange mild_history_jitter() {
  PerturbationRange r;
  r.lo = {0.97, -0.02, -0.05, -0.02, 0.97, -0.05, -0.01, -0.01};
  r.hi = {1.03, 0.02, 0.05, 0.02, 1.03, 0.05, 0.01, 0.01};
  return r;
}

struct TrainerConfig {
  int batch_size = 8;
  int max_iterations = 9000;
  double learning_rate = 1e-3;
  double lr_decay_factor = 0.1;
  int lr_decay_interval = 3000;  // iterations per decay step; <=0 disables
  AdamParams adam;
  double gradient_clip_norm = 10.0;  // global L2 norm cap; <=0 disables
  LossWeights weights;
  LossOptions loss_options;
  std::uint64_t seed = 1;
  int checkpoint_interval = 1000;  // <=0: only the final checkpoint
  std::string checkpoint_path;     // empty: never write checkpoints
  std::string log_path;            // empty: no CSV training log
  PerturbationRange history_jitter = mild_history_jitter();
};

inline void validate_trainer_config(const TrainerConfig& cfg) {
  if (cfg.batch_size < 1) throw ConfigError("trainer: batch_size must be >= 1");
  if (cfg.max_iterations < 0)
    throw ConfigError("trainer: max_iterations must be >= 0");
  if (!(cfg.learning_rate > 0.0))
    throw ConfigError("trainer: learning_rate must be positive");
  if (!(cfg.lr_decay_factor > 0.0))
    throw ConfigError("trainer: lr_decay_factor must be positive");
}

// Step-decay schedule: the base rate is multiplied by the decay factor once
// per full interval elapsed (iterations are counted from zero).
inline double scheduled_lr(const TrainerConfig& cfg, std::uint64_t iteration) {
  if (cfg.lr_decay_interval <= 0) return cfg.learning_rate;
  const std::uint64_t k =
      iteration / static_cast<std::uint64_t>(cfg.lr_decay_interval);
  return cfg.learning_rate * std::pow(cfg.lr_decay_factor,
                                      static_cast<double>(k));
}

// ---------------------------------------------------------------------------
// Sample enumeration and the per-iteration batch.
// ---------------------------------------------------------------------------

struct SamplePair {
  int clip = 0;
  int t = 0;  // current-frame index; the pair covers (t, t-1)
};

// Fixed enumeration order: clips ascending, then t ascending. A clip needs a
// full history window plus the current frame, so shorter clips contribute
// nothing.
inline std::vector<SamplePair> enumerate_pairs(const std::vector<Clip>& clips) {
  std::vector<SamplePair> pairs;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const int n = static_cast<int>(clips[c].unsteady.size());
    for (int t = 30; t < n; ++t)
      pairs.push_back({static_cast<int>(c), t});
  }
  return pairs;
}

namespace detail {

inline std::vector<std::uint32_t> permutation(std::size_t n, Rng rng) {
  std::vector<std::uint32_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::uint32_t>(i);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

// Stream tags keeping the trainer's derived RNGs apart.
constexpr std::uint64_t kEpochStream = 0xE0000000ull;
constexpr std::uint64_t kSampleStream = 0xA0000000ull;
constexpr std::uint64_t kInitStream = 0x11170000ull;

}  // namespace detail

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainResult {
  NetworkParams params;
  AdamState adam;
  std::uint64_t iterations = 0;   // total completed, including resumed ones
  std::uint64_t clip_events = 0;  // batches whose gradient hit the norm cap
  std::vector<LossReport> history;  // batch-mean loss per completed iteration
};

// Trains a fresh network (or continues from `resume`) on the given clips.
// `net` overrides the encoder architecture for fresh starts; its input
// dimensions are always replaced by the clip dimensions.
inline TrainResult train(const std::vector<Clip>& clips,
                         const TrainerConfig& cfg,
                         const Checkpoint* resume = nullptr,
                         const NetworkConfig* net = nullptr) {
  validate_trainer_config(cfg);
  if (clips.empty()) throw ConfigError("train: no clips");
  const int w = clips[0].width, h = clips[0].height;
  for (const Clip& c : clips)
    if (c.width != w || c.height != h)
      throw ConfigError("train: clips must share one frame size");

  const std::vector<SamplePair> pairs = enumerate_pairs(clips);
  if (pairs.empty())
    throw ConfigError(
        "train: no usable training pairs; clips need at least 31 frames");

  TrainResult res;
  if (resume) {
    if (resume->params.config.input_width != w ||
        resume->params.config.input_height != h)
      throw ConfigError("train: checkpoint frame size does not match clips");
    res.params = resume->params;
    if (resume->adam) res.adam = *resume->adam;
  } else {
    NetworkConfig ncfg = net ? *net : NetworkConfig{};
    ncfg.input_width = w;
    ncfg.input_height = h;
    Rng init_rng = Rng(cfg.seed).split(detail::kInitStream);
    res.params = make_network(ncfg, init_rng);
  }
  const std::uint64_t start = res.params.iteration;
  const std::uint64_t stop = static_cast<std::uint64_t>(cfg.max_iterations);
  res.iterations = start;

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    const bool resume_log =
        start > 0 && std::filesystem::exists(cfg.log_path);
    log.open(cfg.log_path, resume_log ? std::ios::app : std::ios::trunc);
    if (!log)
      throw IoError("train: cannot open log '" + cfg.log_path + "'");
    if (!resume_log) log << "iteration,lr,total,pixel,feature,temporal\n";
  }

  NetworkGradients grads = make_gradients(res.params.config);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t per_epoch = std::max<std::size_t>(1, pairs.size() / batch);

  std::vector<std::uint32_t> perm;
  std::uint64_t perm_epoch = ~0ull;

  for (std::uint64_t iter = start; iter < stop; ++iter) {
    const double lr = scheduled_lr(cfg, iter);
    const std::uint64_t epoch = iter / per_epoch;
    const std::uint64_t slot = iter % per_epoch;
    if (epoch != perm_epoch) {
      perm = detail::permutation(pairs.size(),
                                 Rng(cfg.seed).split(detail::kEpochStream +
                                                     epoch));
      perm_epoch = epoch;
    }
    Rng iter_rng = Rng(cfg.seed).split(detail::kSampleStream + iter);

    zero_gradients(grads);
    LossReport mean;
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (std::size_t j = 0; j < batch; ++j) {
      const SamplePair pr =
          pairs[perm[(slot * batch + j) % pairs.size()]];
      const TrainingSample s = make_training_sample(
          clips[pr.clip], pr.t, cfg.history_jitter, iter_rng);

      ForwardCache cache_t, cache_p;
      const Homography f_t = forward(res.params, s.input_t, &cache_t);
      const Homography f_p = forward(res.params, s.input_tm1, &cache_p);

      const BranchData bt{s.unsteady_t, s.steady_t, s.matches_t};
      const BranchData bp{s.unsteady_tm1, s.steady_tm1, s.matches_tm1};
      const TotalLossResult r = total_loss(bt, bp, f_t, f_p, *s.flow,
                                           cfg.weights, cfg.loss_options);

      mean.total += r.report.total * inv_b;
      mean.stab_t += r.report.stab_t * inv_b;
      mean.stab_tm1 += r.report.stab_tm1 * inv_b;
      mean.pixel += r.report.pixel * inv_b;
      mean.feature += r.report.feature * inv_b;
      mean.temporal += r.report.temporal * inv_b;

      TransformGrad dd_t{}, dd_p{};
      for (int k = 0; k < 8; ++k) {
        dd_t[k] = r.dF_t[k] * inv_b;
        dd_p[k] = r.dF_tm1[k] * inv_b;
      }
      backward(res.params, cache_t, dd_t, grads);
      backward(res.params, cache_p, dd_p, grads);
    }

    double sq = 0.0;
    visit_param_blocks(grads, [&](const std::vector<double>& b) {
      for (double g : b) sq += g * g;
    });
    const double gnorm = std::sqrt(sq);

    if (!std::isfinite(mean.total) || !std::isfinite(gnorm)) {
      // Keep the last healthy state reachable, then abort loudly.
      if (!cfg.checkpoint_path.empty())
        save_checkpoint(cfg.checkpoint_path, res.params,
                        res.adam.step > 0 ? &res.adam : nullptr);
      throw NumericError("train: non-finite loss or gradient at iteration " +
                         std::to_string(iter + 1));
    }

    if (cfg.gradient_clip_norm > 0.0 && gnorm > cfg.gradient_clip_norm) {
      const double scale = cfg.gradient_clip_norm / gnorm;
      visit_param_blocks(grads, [&](std::vector<double>& b) {
        for (double& g : b) g *= scale;
      });
      ++res.clip_events;
    }

    adam_step(res.params, grads, res.adam, lr, cfg.adam);
    res.params.iteration = iter + 1;
    res.iterations = iter + 1;
    res.history.push_back(mean);

    if (log) {
      char row[192];
      std::snprintf(row, sizeof(row),
                    "%llu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<unsigned long long>(iter + 1), lr, mean.total,
                    mean.pixel, mean.feature, mean.temporal);
      log << row;
    }

    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
        (iter + 1) % static_cast<std::uint64_t>(cfg.checkpoint_interval) == 0)
      save_checkpoint(cfg.checkpoint_path, res.params, &res.adam);
  }

  if (!cfg.checkpoint_path.empty())
    save_checkpoint(cfg.checkpoint_path, res.params,
                    res.adam.step > 0 ? &res.adam : nullptr);
  return res;
}

// ---------------------------------------------------------------------------
// Validation.
// ---------------------------------------------------------------------------

struct ValidationSummary {
  double stability_output = 0.0;
  double stability_input = 0.0;
  double cropping_ratio = 1.0;
  double distortion = 1.0;
  double pixel = 0.0;           // mean per-frame pixel term at the
                                // predicted transforms
  double pixel_identity = 0.0;  // same with identity transforms (baseline)
  int frames = 0;
};

// Runs the engine over every clip and scores the result against the clip's
// ground truth: pixel alignment versus the steady renders, plus cropping,
// distortion, and stability derived from the known camera paths.
inline ValidationSummary validate(const NetworkParams& params,
                                  const std::vector<Clip>& clips,
                                  std::vector<int> offsets = training_offsets()) {
  if (clips.empty()) throw ConfigError("validate: no clips");
  EngineConfig ecfg;
  ecfg.offsets = std::move(offsets);
  ecfg.bootstrap_count = -ecfg.offsets.front();
  ecfg.crop = CropMode::kNone;

  ValidationSummary sum;
  std::vector<Homography> all_transforms;
  double stab_out = 0.0, stab_in = 0.0;
  int stab_clips = 0;
  const Homography ident = Homography::identity();
  const LossOptions opt;

  for (const Clip& clip : clips) {
    const StabilizeResult r = stabilize_clip(clip.unsteady, params, ecfg);
    const int n = static_cast<int>(clip.unsteady.size());
    for (int t = 0; t < n; ++t) {
      all_transforms.push_back(r.transforms[t]);
      sum.pixel +=
          pixel_loss(clip.steady[t], clip.unsteady[t], r.transforms[t], opt);
      sum.pixel_identity +=
          pixel_loss(clip.steady[t], clip.unsteady[t], ident, opt);
    }
    sum.frames += n;

    if (n >= 16) {
      CameraPath in_path, out_path;
      const Homography c0 =
          compose(clip.unsteady_cams[0], r.transforms[0]);
      const Homography inv_c0 = invert(c0);
      const Homography inv_b0 = invert(clip.unsteady_cams[0]);
      for (int t = 0; t < n; ++t) {
        const Homography ct =
            compose(clip.unsteady_cams[t], r.transforms[t]);
        out_path.push_back(compose(inv_c0, ct));
        in_path.push_back(compose(inv_b0, clip.unsteady_cams[t]));
      }
      stab_out += stability_from_path(out_path).final_score;
      stab_in += stability_from_path(in_path).final_score;
      ++stab_clips;
    }
  }

  if (sum.frames == 0) throw ConfigError("validate: clips are empty");
  sum.pixel /= sum.frames;
  sum.pixel_identity /= sum.frames;
  sum.cropping_ratio = cropping_ratio_from_transforms(all_transforms);
  sum.distortion = distortion_from_transforms(all_transforms);
  if (stab_clips == 0)
    throw ConfigError("validate: need clips of at least 16 frames");
  sum.stability_output = stab_out / stab_clips;
  sum.stability_input = stab_in / stab_clips;
  return sum;
}

}  // namespace stabkit

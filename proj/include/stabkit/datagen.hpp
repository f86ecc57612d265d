#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "stabkit/common.hpp"
#include "stabkit/correspondence.hpp"
#include "stabkit/geometry.hpp"
#include "stabkit/image.hpp"
#include "stabkit/network.hpp"
#include "stabkit/rng.hpp"

namespace stabkit {

// ---------------------------------------------------------------------------
// Scene synthesis: multi-octave value noise plus blurred rectangular blobs,
// giving views that are rich in trackable corners at any crop.
// ---------------------------------------------------------------------------

struct SceneParams {
  int width = 256;
  int height = 256;
  int octaves = 3;
  int base_cells = 6;       // coarsest value-noise grid
  int blob_count = 140;
  int blob_min_side = 6;
  int blob_max_side = 20;
  double blob_amp = 0.45;
};

inline Frame make_scene(const SceneParams& p, Rng& rng) {
  if (p.width < 16 || p.height < 16)
    throw ConfigError("make_scene: scene too small");
  Frame scene(p.width, p.height);
  for (double& v : scene.data) v = 0.5;

  double amp = 0.22;
  int cells = p.base_cells;
  for (int oct = 0; oct < p.octaves; ++oct) {
    Frame grid(cells, cells);
    for (double& v : grid.data) v = rng.uniform(-1.0, 1.0);
    const Frame up = resize(grid, p.width, p.height);
    for (std::size_t i = 0; i < scene.size(); ++i)
      scene.data[i] += amp * up.data[i];
    amp *= 0.55;
    cells *= 2;
  }

  for (int b = 0; b < p.blob_count; ++b) {
    const int side =
        p.blob_min_side + static_cast<int>(rng.below(
                              p.blob_max_side - p.blob_min_side + 1));
    const int x0 = static_cast<int>(rng.below(p.width - side));
    const int y0 = static_cast<int>(rng.below(p.height - side));
    const double a = rng.uniform(0.4, 1.0) * p.blob_amp *
                     (rng.below(2) ? 1.0 : -1.0);
    for (int y = y0; y < y0 + side; ++y)
      for (int x = x0; x < x0 + side; ++x) scene.at(x, y) += a;
  }

  // 3x3 box blur softens blob edges so corners localize smoothly.
  Frame blurred(p.width, p.height);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      double sum = 0.0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= p.width || yy >= p.height) continue;
          sum += scene.at(xx, yy);
          ++n;
        }
      blurred.at(x, y) = sum / n;
    }
  for (double& v : blurred.data) v = std::clamp(v, 0.02, 0.98);
  return blurred;
}

// ---------------------------------------------------------------------------
// Natural cubic spline: smooth interpolation through evenly spaced knots,
// used for the slow intended camera motion.
// ---------------------------------------------------------------------------

namespace detail {

// Thomas algorithm for a tridiagonal system (a: sub, b: diag, c: super).
inline std::vector<double> solve_tridiagonal(std::vector<double> a,
                                             std::vector<double> b,
                                             std::vector<double> c,
                                             std::vector<double> d) {
  const std::size_t n = b.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = a[i] / b[i - 1];
    b[i] -= m * c[i - 1];
    d[i] -= m * d[i - 1];
  }
  std::vector<double> x(n);
  x[n - 1] = d[n - 1] / b[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) x[i] = (d[i] - c[i] * x[i + 1]) / b[i];
  return x;
}

}  // namespace detail

// Samples the natural cubic spline through knots[i] at x = i * spacing for
// integer x = 0 .. samples-1. The knot range must cover the sample range.
inline std::vector<double> natural_spline(const std::vector<double>& knots,
                                          double spacing, int samples) {
  if (knots.size() < 2) throw ConfigError("natural_spline: need >= 2 knots");
  if (spacing <= 0.0) throw ConfigError("natural_spline: bad spacing");
  const double span = spacing * static_cast<double>(knots.size() - 1);
  if (span + 1e-9 < samples - 1)
    throw ConfigError("natural_spline: knots do not cover sample range");

  // Second derivatives M_i: natural ends, continuity at interior knots.
  const std::size_t n = knots.size();
  std::vector<double> M(n, 0.0);
  if (n > 2) {
    const std::size_t m = n - 2;
    std::vector<double> a(m, spacing / 6.0), b(m, 2.0 * spacing / 3.0),
        c(m, spacing / 6.0), d(m);
    a[0] = 0.0;
    c[m - 1] = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      d[i] = (knots[i + 2] - 2.0 * knots[i + 1] + knots[i]) / spacing;
    const std::vector<double> sol = detail::solve_tridiagonal(a, b, c, d);
    for (std::size_t i = 0; i < m; ++i) M[i + 1] = sol[i];
  }

  std::vector<double> out(samples);
  for (int t = 0; t < samples; ++t) {
    const double x = static_cast<double>(t);
    std::size_t i = std::min(static_cast<std::size_t>(x / spacing), n - 2);
    const double x0 = spacing * static_cast<double>(i);
    const double u = x - x0;      // distance from left knot
    const double v = spacing - u;  // distance to right knot
    out[t] = (M[i] * v * v * v + M[i + 1] * u * u * u) / (6.0 * spacing) +
             (knots[i] - M[i] * spacing * spacing / 6.0) * v / spacing +
             (knots[i + 1] - M[i + 1] * spacing * spacing / 6.0) * u / spacing;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Camera paths: a slow spline-driven intended path and a band-limited
// sinusoidal shake on top of it.
// ---------------------------------------------------------------------------

struct ClipParams {
  int frames = 120;
  int width = 96;
  int height = 54;
  double fps = 30.0;
  double footprint = 0.5;  // fraction of the scene a frame sees

  int knot_spacing = 30;
  double pose_translation_amp = 0.10;  // scene units at path knots
  double pose_rotation_amp = 0.04;     // radians
  double pose_log_scale_amp = 0.04;

  double jitter_translation_amp = 0.05;  // frame units
  double jitter_rotation_amp = 0.015;
  double jitter_freq_lo = 0.15;  // cycles per frame
  double jitter_freq_hi = 0.45;
  int jitter_components = 3;

  int matches_per_frame = 32;
  double match_extent = 0.75;  // source points drawn from this square
};

namespace detail {

inline Homography similarity(double tx, double ty, double angle,
                             double scale) {
  Homography h;
  const double c = std::cos(angle) * scale, s = std::sin(angle) * scale;
  h.h = {c, -s, tx, s, c, ty, 0.0, 0.0};
  return h;
}

// Random smooth per-frame signal: a natural spline through random knots.
inline std::vector<double> spline_signal(int frames, int spacing, double amp,
                                         Rng& rng) {
  const int nknots = (frames - 2) / spacing + 2;
  std::vector<double> knots(nknots);
  for (double& k : knots) k = rng.normal() * amp;
  return natural_spline(knots, spacing, frames);
}

// Zero-mean shake whose spectrum sits entirely inside the frequency band:
// a sum of sinusoids snapped to exact DFT bins of the clip length.
inline std::vector<double> band_signal(int frames, double f_lo, double f_hi,
                                       int components, double amp, Rng& rng) {
  const int k_lo = static_cast<int>(std::ceil(f_lo * frames));
  const int k_hi = std::min(static_cast<int>(std::floor(f_hi * frames)),
                            frames / 2 - 1);
  if (k_hi < k_lo)
    throw ConfigError("band_signal: clip too short for the jitter band");
  std::vector<double> out(frames, 0.0);
  for (int c = 0; c < components; ++c) {
    const int k =
        k_lo + static_cast<int>(rng.below(
                   static_cast<std::uint64_t>(k_hi - k_lo + 1)));
    const double a = amp * rng.uniform(0.5, 1.5) /
                     static_cast<double>(components);
    const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    for (int t = 0; t < frames; ++t)
      out[t] += a * std::sin(2.0 * 3.14159265358979323846 * k * t /
                                 static_cast<double>(frames) +
                             phase);
  }
  return out;
}

}  // namespace detail

// One synthetic clip: the scene, both camera paths, both renders, and exact
// per-frame supervision (return transform, correspondences, scene flow).
struct Clip {
  int width = 0;
  int height = 0;
  double fps = 30.0;
  std::vector<Frame> steady;
  std::vector<Frame> unsteady;
  CameraPath steady_cams;    // frame -> scene maps A_t
  CameraPath unsteady_cams;  // frame -> scene maps B_t
  std::vector<Homography> gt;  // warp(unsteady[t], gt[t]) ~= steady[t]
  std::vector<CorrespondenceSet> matches;  // src steady-side, dst unsteady
  std::vector<FlowField> flow;  // flow[t]: steady t-1 -> t; flow[0] is zero
};

namespace detail {

// The cameras are similarities (affine), so a view lies inside the scene
// exactly when the four frame corners do.
inline bool covers_frame(const Homography& cam) {
  for (double cy : {-1.0, 1.0})
    for (double cx : {-1.0, 1.0}) {
      const Vec2 v = apply(cam, {cx, cy});
      if (std::abs(v.x) > 0.99 || std::abs(v.y) > 0.99) return false;
    }
  return true;
}

}  // namespace detail

inline Clip make_clip(const ClipParams& p, Rng& rng) {
  if (p.frames < 2) throw ConfigError("make_clip: need >= 2 frames");
  if (p.footprint <= 0.0 || p.footprint >= 1.0)
    throw ConfigError("make_clip: footprint must be in (0, 1)");

  // Match the scene aspect to the frame aspect so a footprint view samples
  // the scene near-isotropically; a square scene under a 16:9 view would be
  // badly undersampled vertically and alias.
  SceneParams sp;
  sp.height = std::max(
      16, static_cast<int>(std::lround(
              sp.width * static_cast<double>(p.height) / p.width)));
  Rng scene_rng = rng.split(1);
  const Frame scene = make_scene(sp, scene_rng);

  Rng path_rng = rng.split(2);
  std::vector<double> ptx = detail::spline_signal(
      p.frames, p.knot_spacing, p.pose_translation_amp, path_rng);
  std::vector<double> pty = detail::spline_signal(
      p.frames, p.knot_spacing, p.pose_translation_amp, path_rng);
  std::vector<double> prot = detail::spline_signal(
      p.frames, p.knot_spacing, p.pose_rotation_amp, path_rng);
  std::vector<double> plogs = detail::spline_signal(
      p.frames, p.knot_spacing, p.pose_log_scale_amp, path_rng);

  Rng jitter_rng = rng.split(3);
  auto band = [&](double amp) {
    return detail::band_signal(p.frames, p.jitter_freq_lo, p.jitter_freq_hi,
                               p.jitter_components, amp, jitter_rng);
  };
  std::vector<double> jtx = band(p.jitter_translation_amp);
  std::vector<double> jty = band(p.jitter_translation_amp);
  std::vector<double> jrot = band(p.jitter_rotation_amp);

  Homography footprint = Homography::identity();
  footprint.h[0] = p.footprint;
  footprint.h[4] = p.footprint;

  auto cams_at = [&](int t) {
    const Homography pose = detail::similarity(ptx[t], pty[t], prot[t],
                                               std::exp(plogs[t]));
    const Homography A = compose(pose, footprint);
    const Homography J = detail::similarity(jtx[t], jty[t], jrot[t], 1.0);
    return std::pair<Homography, Homography>{A, compose(A, J)};
  };

  // Every frame must see scene content only; shrink the motion until both
  // camera paths stay inside the scene for the whole clip.
  for (int attempt = 0;; ++attempt) {
    bool ok = true;
    for (int t = 0; t < p.frames && ok; ++t) {
      const auto [A, B] = cams_at(t);
      ok = detail::covers_frame(A) && detail::covers_frame(B);
    }
    if (ok) break;
    if (attempt >= 60)
      throw NumericError("make_clip: cannot fit camera paths in the scene");
    for (std::vector<double>* sig : {&ptx, &pty, &prot, &plogs, &jtx, &jty,
                                     &jrot})
      for (double& v : *sig) v *= 0.85;
  }

  Clip clip;
  clip.width = p.width;
  clip.height = p.height;
  clip.fps = p.fps;
  Rng match_rng = rng.split(4);
  for (int t = 0; t < p.frames; ++t) {
    const auto [A, B] = cams_at(t);
    clip.steady_cams.push_back(A);
    clip.unsteady_cams.push_back(B);
    clip.gt.push_back(compose(invert(B), A));

    clip.steady.push_back(render_view(scene, A, p.width, p.height));
    clip.unsteady.push_back(render_view(scene, B, p.width, p.height));
    for (const Frame* f : {&clip.steady.back(), &clip.unsteady.back()})
      if (!std::all_of(f->mask.begin(), f->mask.end(),
                       [](std::uint8_t m) { return m != 0; }))
        throw NumericError("make_clip: rendered frame left the scene");

    CorrespondenceSet set;
    for (int i = 0; i < p.matches_per_frame; ++i) {
      const Vec2 src{match_rng.uniform(-p.match_extent, p.match_extent),
                     match_rng.uniform(-p.match_extent, p.match_extent)};
      set.push_back({src, apply(clip.gt.back(), src), 1.0});
    }
    clip.matches.push_back(std::move(set));

    clip.flow.push_back(
        t == 0 ? FlowField(p.width, p.height)
               : synthetic_flow(clip.steady_cams[t - 1], A, p.width,
                                p.height));
  }
  return clip;
}

// ---------------------------------------------------------------------------
// Augmentation. Both operations are exact involutions.
// ---------------------------------------------------------------------------

namespace detail {

inline Frame mirror_frame(const Frame& f) {
  Frame out(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      out.at(x, y) = f.at(f.width - 1 - x, y);
      out.mask[static_cast<std::size_t>(y) * f.width + x] =
          f.mask[static_cast<std::size_t>(y) * f.width + (f.width - 1 - x)];
    }
  return out;
}

// Conjugation by the horizontal mirror: M * H * M with M = diag(-1, 1, 1).
inline Homography mirror_conjugate(const Homography& g) {
  Homography out = g;
  out.h[1] = -g[1];
  out.h[2] = -g[2];
  out.h[3] = -g[3];
  out.h[6] = -g[6];
  return out;
}

}  // namespace detail

inline Clip flip_horizontal(const Clip& clip) {
  Clip out;
  out.width = clip.width;
  out.height = clip.height;
  out.fps = clip.fps;
  for (const Frame& f : clip.steady)
    out.steady.push_back(detail::mirror_frame(f));
  for (const Frame& f : clip.unsteady)
    out.unsteady.push_back(detail::mirror_frame(f));
  // Frame coords are mirrored, scene coords are not: A' = A o M.
  Homography M = Homography::identity();
  M.h[0] = -1.0;
  for (const Homography& a : clip.steady_cams)
    out.steady_cams.push_back(compose(a, M));
  for (const Homography& b : clip.unsteady_cams)
    out.unsteady_cams.push_back(compose(b, M));
  for (const Homography& g : clip.gt)
    out.gt.push_back(detail::mirror_conjugate(g));
  for (const CorrespondenceSet& set : clip.matches) {
    CorrespondenceSet flipped;
    for (const Match& m : set)
      flipped.push_back(
          {{-m.src.x, m.src.y}, {-m.dst.x, m.dst.y}, m.score});
    out.matches.push_back(std::move(flipped));
  }
  for (const FlowField& f : clip.flow) {
    FlowField flipped(f.width, f.height);
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) {
        const std::size_t dst = static_cast<std::size_t>(y) * f.width + x;
        const std::size_t src =
            static_cast<std::size_t>(y) * f.width + (f.width - 1 - x);
        flipped.dx[dst] = -f.dx[src];
        flipped.dy[dst] = f.dy[src];
        flipped.mask[dst] = f.mask[src];
      }
    out.flow.push_back(std::move(flipped));
  }
  return out;
}

inline Clip reverse_time(const Clip& clip) {
  Clip out;
  out.width = clip.width;
  out.height = clip.height;
  out.fps = clip.fps;
  const std::size_t n = clip.steady.size();
  for (std::size_t i = n; i-- > 0;) {
    out.steady.push_back(clip.steady[i]);
    out.unsteady.push_back(clip.unsteady[i]);
    out.steady_cams.push_back(clip.steady_cams[i]);
    out.unsteady_cams.push_back(clip.unsteady_cams[i]);
    out.gt.push_back(clip.gt[i]);
    out.matches.push_back(clip.matches[i]);
  }
  // Flows do not reverse in place; recompute them from the reversed path.
  for (std::size_t t = 0; t < n; ++t)
    out.flow.push_back(t == 0 ? FlowField(clip.width, clip.height)
                              : synthetic_flow(out.steady_cams[t - 1],
                                               out.steady_cams[t], clip.width,
                                               clip.height));
  return out;
}

// The full augmentation family of a clip: {original, h-flip, time-reverse,
// both}, quadrupling a training set without new captures.
inline std::vector<Clip> augment(const Clip& clip) {
  std::vector<Clip> out;
  out.reserve(4);
  out.push_back(clip);
  out.push_back(flip_horizontal(clip));
  out.push_back(reverse_time(clip));
  out.push_back(reverse_time(out[1]));
  return out;
}

// ---------------------------------------------------------------------------
// Training samples.
// ---------------------------------------------------------------------------

struct TrainingSample {
  std::vector<double> input_t;    // 6-channel stack for the current branch
  std::vector<double> input_tm1;  // same for the previous branch
  int width = 0;
  int height = 0;
  int t = 0;
  const Frame* unsteady_t = nullptr;
  const Frame* unsteady_tm1 = nullptr;
  const Frame* steady_t = nullptr;
  const Frame* steady_tm1 = nullptr;
  const CorrespondenceSet* matches_t = nullptr;
  const CorrespondenceSet* matches_tm1 = nullptr;
  const FlowField* flow = nullptr;  // t-1 -> t
};

// Builds the two network inputs for the branch pair (t, t-1). The history
// channels are ground-truth steady frames, each disturbed by its own random
// perturbation so the network learns to tolerate imperfect history.
inline TrainingSample make_training_sample(const Clip& clip, int t,
                                           const PerturbationRange& range,
                                           Rng& rng) {
  const int n = static_cast<int>(clip.unsteady.size());
  if (t < 30 || t >= n)
    throw ConfigError("make_training_sample: t must be in [30, frames)");

  TrainingSample s;
  s.width = clip.width;
  s.height = clip.height;
  s.t = t;

  auto build_input = [&](int base) {
    std::vector<Frame> channels;
    channels.reserve(6);
    for (int off : kHistoryOffsets) {
      const int idx = std::max(0, base + off);
      const Homography pert = sample_perturbation(range, rng);
      channels.push_back(warp_frame(clip.steady[idx], pert));
    }
    channels.push_back(clip.unsteady[base]);
    std::vector<const Frame*> ptrs;
    for (const Frame& f : channels) ptrs.push_back(&f);
    return stack_channels(ptrs);
  };
  s.input_t = build_input(t);
  s.input_tm1 = build_input(t - 1);

  s.unsteady_t = &clip.unsteady[t];
  s.unsteady_tm1 = &clip.unsteady[t - 1];
  s.steady_t = &clip.steady[t];
  s.steady_tm1 = &clip.steady[t - 1];
  s.matches_t = &clip.matches[t];
  s.matches_tm1 = &clip.matches[t - 1];
  s.flow = &clip.flow[t];
  return s;
}

}  // namespace stabkit

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stabkit/common.hpp"
#include "stabkit/correspondence.hpp"
#include "stabkit/geometry.hpp"
#include "stabkit/image.hpp"

namespace stabkit {

// Evaluation metrics for stabilization quality: cropping ratio (content
// retained), distortion (worst anisotropy), and stability (fraction of
// camera-path energy in the low-frequency bins).
//
// Homography direction convention used throughout this header: a transform
// M "aligning a to b" satisfies a(q) ~= b(apply(M, q)), i.e. it is the map
// warp_frame would use to rebuild a from b.

struct MetricParams {
  CornerParams corners;
  MatchParams match;
  double ransac_px = 3.0;  // inlier threshold in pixels
  int ransac_iters = 500;
  int min_matches = 8;         // fewer than this flags the frame
  std::uint64_t seed = 0x5742ab01u;  // RANSAC sampling seed
  bool include_dc_in_denominator = false;  // stability denominator option
};

// Estimates M with a(q) ~= b(apply(M, q)) by matching corners of a into b.
// Returns identity with *ok = false when estimation is impossible.
inline Homography estimate_alignment(const Frame& a, const Frame& b,
                                     const MetricParams& params = {},
                                     bool* ok = nullptr,
                                     std::uint64_t salt = 0) {
  if (ok) *ok = false;
  try {
    const std::vector<Vec2> corners = detect_corners(a, params.corners);
    const CorrespondenceSet matches =
        match_patches(a, b, corners, params.match);
    if (static_cast<int>(matches.size()) < params.min_matches)
      return Homography::identity();
    RansacParams rp;
    rp.iters = params.ransac_iters;
    rp.inlier_thresh = pixel_thresh_to_norm(params.ransac_px, a.width);
    Rng rng = Rng(params.seed).split(salt);
    const RansacResult res = ransac_homography(matches, rp, rng);
    if (ok) *ok = true;
    return res.model;
  } catch (const NumericError&) {
    return Homography::identity();
  } catch (const ConfigError&) {
    return Homography::identity();
  }
}

struct InterframeResult {
  std::vector<Homography> steps;  // steps[t] aligns frame t+1 to frame t
  std::vector<std::uint8_t> ok;   // 0 = fallback identity
};

// Frame-to-frame motion of one video: steps[t] satisfies
// frames[t+1](q) ~= frames[t](apply(steps[t], q)).
inline InterframeResult estimate_interframe(const std::vector<Frame>& frames,
                                            const MetricParams& params = {}) {
  if (frames.size() < 2)
    throw ConfigError("estimate_interframe: need at least 2 frames");
  InterframeResult out;
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    bool ok = false;
    out.steps.push_back(
        estimate_alignment(frames[t + 1], frames[t], params, &ok, t));
    out.ok.push_back(ok ? 1 : 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cropping ratio and distortion.
// ---------------------------------------------------------------------------

// Mean scale of the per-frame output->input sampling maps; flagged frames
// are excluded. A scale of 0.9 means the output shows 90% of the input.
inline double cropping_ratio_from_transforms(
    const std::vector<Homography>& maps,
    const std::vector<std::uint8_t>* ok = nullptr) {
  if (maps.empty())
    throw ConfigError("cropping_ratio: no transforms");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (ok && !(*ok)[i]) continue;
    sum += decompose(maps[i]).scale;
    ++n;
  }
  if (n == 0) throw NumericError("cropping_ratio: no usable frames");
  return sum / static_cast<double>(n);
}

// Worst-case anisotropy: min over frames of sigma2/sigma1 of the linear
// block. Direction-invariant, so either map orientation works.
inline double distortion_from_transforms(
    const std::vector<Homography>& maps,
    const std::vector<std::uint8_t>* ok = nullptr) {
  if (maps.empty()) throw ConfigError("distortion: no transforms");
  double worst = 1.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (ok && !(*ok)[i]) continue;
    const HomographyDecomposition d = decompose(maps[i]);
    worst = std::min(worst, d.sigma2 / d.sigma1);
    ++n;
  }
  if (n == 0) throw NumericError("distortion: no usable frames");
  return worst;
}

// ---------------------------------------------------------------------------
// Stability.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> power_spectrum_1d(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<double> power(n / 2 + 1, 0.0);
  for (int k = 0; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (int t = 0; t < n; ++t) {
      const double ang = -2.0 * M_PI * k * t / n;
      re += x[t] * std::cos(ang);
      im += x[t] * std::sin(ang);
    }
    power[k] = re * re + im * im;
  }
  return power;
}

}  // namespace detail

// Fraction of signal energy in frequency bins 2..6 out of bins 2..N/2 (the
// DC bin and the near-DC drift bin are excluded unless include_dc adds them
// to the denominator). A signal with no energy at all scores 1.
inline double signal_band_score(const std::vector<double>& signal,
                                bool include_dc = false) {
  if (signal.size() < 16)
    throw ConfigError("signal_band_score: need at least 16 samples");
  const std::vector<double> power = detail::power_spectrum_1d(signal);
  double num = 0.0, den = include_dc ? power[0] + power[1] : 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < power.size(); ++k) total += power[k];
  for (std::size_t k = 2; k < power.size(); ++k) {
    den += power[k];
    if (k <= 6) num += power[k];
  }
  // A signal whose in-band energy is all rounding dust (constant or pure
  // drift inputs) counts as perfectly steady.
  if (den <= total * 1e-12) return 1.0;
  return num / den;
}

struct StabilityScore {
  double translation_x = 1.0;
  double translation_y = 1.0;
  double rotation = 1.0;
  double translation = 1.0;  // min of the two axes
  double final_score = 1.0;  // min(translation, rotation)
};

inline StabilityScore stability_from_signals(const std::vector<double>& tx,
                                             const std::vector<double>& ty,
                                             const std::vector<double>& rot,
                                             bool include_dc = false) {
  if (tx.size() != ty.size() || tx.size() != rot.size())
    throw ConfigError("stability_from_signals: signal lengths differ");
  StabilityScore s;
  s.translation_x = signal_band_score(tx, include_dc);
  s.translation_y = signal_band_score(ty, include_dc);
  s.rotation = signal_band_score(rot, include_dc);
  s.translation = std::min(s.translation_x, s.translation_y);
  s.final_score = std::min(s.translation, s.rotation);
  return s;
}

// Stability of a given camera path (e.g. ground-truth transforms, or the
// accumulated interframe estimates).
inline StabilityScore stability_from_path(const CameraPath& path,
                                          bool include_dc = false) {
  if (path.size() < 16)
    throw ConfigError("stability_from_path: need at least 16 frames");
  std::vector<double> tx, ty, rot;
  for (const Homography& p : path) {
    tx.push_back(p[2]);
    ty.push_back(p[5]);
    rot.push_back(decompose(p).rotation_angle);
  }
  return stability_from_signals(tx, ty, rot, include_dc);
}

inline StabilityScore stability_score(const std::vector<Frame>& frames,
                                      const MetricParams& params = {}) {
  if (frames.size() < 16)
    throw ConfigError("stability_score: need at least 16 frames");
  const InterframeResult inter = estimate_interframe(frames, params);
  return stability_from_path(accumulate_path(inter.steps),
                             params.include_dc_in_denominator);
}

// ---------------------------------------------------------------------------
// Full report.
// ---------------------------------------------------------------------------

struct MetricReport {
  double cropping_ratio = 1.0;
  double distortion = 1.0;
  double stability = 1.0;        // of the output video
  double stability_input = 1.0;  // of the input video, for comparison
  std::vector<double> scale_series;       // per-frame crop scale
  std::vector<double> anisotropy_series;  // per-frame sigma2/sigma1
  std::vector<std::uint8_t> pair_ok;      // per-frame estimation success
};

// Compares a stabilized video against its input. Per-frame output->input
// maps are estimated by matching; pass gt_maps to bypass estimation (e.g.
// the engine's own sampling transforms).
inline MetricReport report(const std::vector<Frame>& input,
                           const std::vector<Frame>& output,
                           const MetricParams& params = {},
                           const std::vector<Homography>* gt_maps = nullptr) {
  if (input.size() != output.size())
    throw ConfigError("report: input/output lengths differ");
  if (input.empty()) throw ConfigError("report: empty videos");
  if (gt_maps && gt_maps->size() != input.size())
    throw ConfigError("report: transform list length mismatch");

  MetricReport rep;
  std::vector<Homography> maps;
  for (std::size_t t = 0; t < input.size(); ++t) {
    bool ok = true;
    const Homography m =
        gt_maps ? (*gt_maps)[t]
                : estimate_alignment(output[t], input[t], params, &ok,
                                     0x0f00 + t);
    maps.push_back(m);
    rep.pair_ok.push_back(ok ? 1 : 0);
    const HomographyDecomposition d = decompose(m);
    rep.scale_series.push_back(d.scale);
    rep.anisotropy_series.push_back(d.sigma2 / d.sigma1);
  }
  rep.cropping_ratio = cropping_ratio_from_transforms(maps, &rep.pair_ok);
  rep.distortion = distortion_from_transforms(maps, &rep.pair_ok);
  if (input.size() >= 16) {
    rep.stability = stability_score(output, params).final_score;
    rep.stability_input = stability_score(input, params).final_score;
  }
  return rep;
}

}  // namespace stabkit

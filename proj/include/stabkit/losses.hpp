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

namespace stabkit {

struct LossWeights {
  double alpha = 0.33;   // feature term weight inside each stability term
  double lambda = 30.0;  // temporal term weight
};

struct LossOptions {
  // false: normalize sums by the full pixel count; true: by the number of
  // pixels actually compared (those valid in every frame involved).
  bool normalize_by_valid = false;
};

struct LossReport {
  double total = 0.0;
  double stab_t = 0.0;
  double stab_tm1 = 0.0;
  double pixel = 0.0;     // current-branch pixel term
  double feature = 0.0;   // current-branch feature term
  double temporal = 0.0;
};

using TransformGrad = std::array<double, 8>;

namespace detail {

// Bilinear read of a warped frame and its per-parameter Jacobian at one
// normalized position. Valid only when every contributing pixel is valid,
// so border garbage never leaks into the temporal term.
struct MaskedSample {
  double value = 0.0;
  std::array<double, 8> jac{};
  bool valid = false;
};

inline MaskedSample sample_warped(const Frame& f, const WarpJacobian& jac,
                                  Vec2 p) {
  MaskedSample out;
  if (p.x < -1.0 || p.x > 1.0 || p.y < -1.0 || p.y > 1.0) return out;
  const double px = pixel_from_norm(p.x, f.width);
  const double py = pixel_from_norm(p.y, f.height);
  int x0 = static_cast<int>(std::floor(px));
  int y0 = static_cast<int>(std::floor(py));
  x0 = std::clamp(x0, 0, f.width - 2);
  y0 = std::clamp(y0, 0, f.height - 2);
  const double fx = px - x0, fy = py - y0;
  const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
  const double w01 = (1 - fx) * fy, w11 = fx * fy;
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const double ws[4] = {w00, w10, w01, w11};
  for (int i = 0; i < 4; ++i)
    if (ws[i] > 0.0 && !f.valid(xs[i], ys[i])) return out;
  out.valid = true;
  for (int i = 0; i < 4; ++i) {
    if (ws[i] == 0.0) continue;
    out.value += ws[i] * f.at(xs[i], ys[i]);
    for (int k = 0; k < 8; ++k)
      out.jac[k] += ws[i] * jac.at(k, xs[i], ys[i]);
  }
  return out;
}

}  // namespace detail

// Mean squared intensity difference between the target frame and the input
// frame warped by F, counting only pixels valid in both. With the default
// normalization the sum is divided by the full frame area.
inline double pixel_loss(const Frame& target, const Frame& input,
                         const Homography& F, const LossOptions& opt = {},
                         TransformGrad* grad = nullptr) {
  if (target.width != input.width || target.height != input.height)
    throw ConfigError("pixel_loss: frame dims differ");
  const WarpWithJacobianResult res = warp_with_jacobian(input, F);
  double sum = 0.0;
  TransformGrad g{};
  std::size_t counted = 0;
  for (int y = 0; y < target.height; ++y)
    for (int x = 0; x < target.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * target.width + x;
      if (!res.frame.mask[i] || !target.mask[i]) continue;
      const double r = res.frame.data[i] - target.data[i];
      sum += r * r;
      ++counted;
      if (grad)
        for (int k = 0; k < 8; ++k) g[k] += 2.0 * r * res.jac.at(k, x, y);
    }
  const double denom =
      opt.normalize_by_valid ? static_cast<double>(counted)
                             : static_cast<double>(target.size());
  if (opt.normalize_by_valid && counted == 0)
    throw NumericError("pixel_loss: no overlapping valid pixels");
  sum /= denom;
  if (grad)
    for (int k = 0; k < 8; ++k) (*grad)[k] = g[k] / denom;
  return sum;
}

// Mean squared distance between transformed source points and their matched
// destinations: residual_i = apply(F, src_i) - dst_i.
inline double feature_loss(const CorrespondenceSet& matches,
                           const Homography& F,
                           TransformGrad* grad = nullptr) {
  if (matches.empty()) throw ConfigError("feature_loss: no matches");
  double sum = 0.0;
  TransformGrad g{};
  for (const Match& m : matches) {
    const double sx = m.src.x, sy = m.src.y;
    const double den = F[6] * sx + F[7] * sy + 1.0;
    if (std::abs(den) < detail::kDenEps)
      throw NumericError("feature_loss: degenerate transform at a match");
    const double inv = 1.0 / den;
    const double u = (F[0] * sx + F[1] * sy + F[2]) * inv;
    const double v = (F[3] * sx + F[4] * sy + F[5]) * inv;
    const double rx = u - m.dst.x;
    const double ry = v - m.dst.y;
    sum += rx * rx + ry * ry;
    if (grad) {
      g[0] += 2 * rx * sx * inv;
      g[1] += 2 * rx * sy * inv;
      g[2] += 2 * rx * inv;
      g[3] += 2 * ry * sx * inv;
      g[4] += 2 * ry * sy * inv;
      g[5] += 2 * ry * inv;
      g[6] += 2 * (rx * -u + ry * -v) * sx * inv;
      g[7] += 2 * (rx * -u + ry * -v) * sy * inv;
    }
  }
  const double inv_m = 1.0 / static_cast<double>(matches.size());
  if (grad)
    for (int k = 0; k < 8; ++k) (*grad)[k] = g[k] * inv_m;
  return sum * inv_m;
}

// Mean squared difference between the current stabilized frame and the
// previous stabilized frame pulled forward along the scene flow:
//   r(q) = warp(input_t, F_t)(q) - warp(input_tm1, F_tm1)(q + flow(q)).
// The flow is treated as fixed data; gradients flow into both transforms.
inline double temporal_loss(const Frame& input_t, const Frame& input_tm1,
                            const Homography& F_t, const Homography& F_tm1,
                            const FlowField& flow,
                            const LossOptions& opt = {},
                            TransformGrad* grad_t = nullptr,
                            TransformGrad* grad_tm1 = nullptr) {
  if (input_t.width != input_tm1.width || input_t.height != input_tm1.height)
    throw ConfigError("temporal_loss: frame dims differ");
  if (flow.width != input_t.width || flow.height != input_t.height)
    throw ConfigError("temporal_loss: flow dims differ");
  const WarpWithJacobianResult cur = warp_with_jacobian(input_t, F_t);
  const WarpWithJacobianResult prev = warp_with_jacobian(input_tm1, F_tm1);

  double sum = 0.0;
  TransformGrad gt{}, gp{};
  std::size_t counted = 0;
  for (int y = 0; y < input_t.height; ++y) {
    const double ny = norm_from_pixel(y, input_t.height);
    for (int x = 0; x < input_t.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * input_t.width + x;
      if (!flow.mask[i] || !cur.frame.mask[i]) continue;
      const double nx = norm_from_pixel(x, input_t.width);
      const detail::MaskedSample ps = detail::sample_warped(
          prev.frame, prev.jac, {nx + flow.dx[i], ny + flow.dy[i]});
      if (!ps.valid) continue;
      const double r = cur.frame.data[i] - ps.value;
      sum += r * r;
      ++counted;
      for (int k = 0; k < 8; ++k) {
        gt[k] += 2.0 * r * cur.jac.at(k, x, y);
        gp[k] -= 2.0 * r * ps.jac[k];
      }
    }
  }
  const double denom =
      opt.normalize_by_valid ? static_cast<double>(counted)
                             : static_cast<double>(input_t.size());
  if (opt.normalize_by_valid && counted == 0)
    throw NumericError("temporal_loss: no comparable pixels");
  sum /= denom;
  if (grad_t)
    for (int k = 0; k < 8; ++k) (*grad_t)[k] = gt[k] / denom;
  if (grad_tm1)
    for (int k = 0; k < 8; ++k) (*grad_tm1)[k] = gp[k] / denom;
  return sum;
}

// Supervision for one branch of a training pair.
struct BranchData {
  const Frame* input = nullptr;    // unsteady frame fed to the network
  const Frame* target = nullptr;   // its steady rendition
  const CorrespondenceSet* matches = nullptr;  // src steady-side, dst input-side
};

struct TotalLossResult {
  LossReport report;
  TransformGrad dF_t{};
  TransformGrad dF_tm1{};
};

// Full training objective over a consecutive pair:
//   total = stab(t) + stab(t-1) + lambda * temporal,
//   stab  = pixel + alpha * feature.
inline TotalLossResult total_loss(const BranchData& branch_t,
                                  const BranchData& branch_tm1,
                                  const Homography& F_t,
                                  const Homography& F_tm1,
                                  const FlowField& flow_tm1_to_t,
                                  const LossWeights& weights = {},
                                  const LossOptions& opt = {}) {
  if (!branch_t.input || !branch_t.target || !branch_t.matches ||
      !branch_tm1.input || !branch_tm1.target || !branch_tm1.matches)
    throw ConfigError("total_loss: incomplete branch data");

  TotalLossResult out;
  TransformGrad g_pix_t{}, g_feat_t{}, g_pix_p{}, g_feat_p{};
  TransformGrad g_temp_t{}, g_temp_p{};

  const double pixel_t =
      pixel_loss(*branch_t.target, *branch_t.input, F_t, opt, &g_pix_t);
  const double feat_t = feature_loss(*branch_t.matches, F_t, &g_feat_t);
  const double pixel_p =
      pixel_loss(*branch_tm1.target, *branch_tm1.input, F_tm1, opt, &g_pix_p);
  const double feat_p = feature_loss(*branch_tm1.matches, F_tm1, &g_feat_p);
  const double temporal =
      temporal_loss(*branch_t.input, *branch_tm1.input, F_t, F_tm1,
                    flow_tm1_to_t, opt, &g_temp_t, &g_temp_p);

  out.report.pixel = pixel_t;
  out.report.feature = feat_t;
  out.report.temporal = temporal;
  out.report.stab_t = pixel_t + weights.alpha * feat_t;
  out.report.stab_tm1 = pixel_p + weights.alpha * feat_p;
  out.report.total =
      out.report.stab_t + out.report.stab_tm1 + weights.lambda * temporal;
  for (int k = 0; k < 8; ++k) {
    out.dF_t[k] =
        g_pix_t[k] + weights.alpha * g_feat_t[k] + weights.lambda * g_temp_t[k];
    out.dF_tm1[k] =
        g_pix_p[k] + weights.alpha * g_feat_p[k] + weights.lambda * g_temp_p[k];
  }
  return out;
}

}  // namespace stabkit

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "stabkit/common.hpp"
#include "stabkit/geometry.hpp"
#include "stabkit/image.hpp"
#include "stabkit/rng.hpp"

namespace stabkit {

// One matched point pair in normalized coordinates. A homography fitted
// from matches maps src to dst, the sampling direction used by warp_frame:
// in training data src lives in the steady frame and dst in the unsteady one.
struct Match {
  Vec2 src;
  Vec2 dst;
  double score = 0.0;
};

using CorrespondenceSet = std::vector<Match>;

struct CornerParams {
  double k = 0.04;            // Harris trace weight
  double rel_threshold = 0.01;  // keep responses above rel * max response
  int max_corners = 256;
  int border = 2;             // ignore detections this close to the edge
};

// Harris corner detector on one grayscale frame. Returns normalized corner
// locations sorted by decreasing response.
inline std::vector<Vec2> detect_corners(const Frame& f,
                                        const CornerParams& params = {}) {
  const int w = f.width, h = f.height;
  if (w < 8 || h < 8) return {};

  std::vector<double> gx(f.size(), 0.0), gy(f.size(), 0.0);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      // Sobel.
      gx[i] = (f.at(x + 1, y - 1) + 2 * f.at(x + 1, y) + f.at(x + 1, y + 1) -
               f.at(x - 1, y - 1) - 2 * f.at(x - 1, y) - f.at(x - 1, y + 1));
      gy[i] = (f.at(x - 1, y + 1) + 2 * f.at(x, y + 1) + f.at(x + 1, y + 1) -
               f.at(x - 1, y - 1) - 2 * f.at(x, y - 1) - f.at(x + 1, y - 1));
    }

  // Structure tensor, box-smoothed over 3x3, then the Harris response.
  std::vector<double> resp(f.size(), 0.0);
  double max_resp = 0.0;
  for (int y = 2; y < h - 2; ++y)
    for (int x = 2; x < w - 2; ++x) {
      double sxx = 0, syy = 0, sxy = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const std::size_t j = static_cast<std::size_t>(y + dy) * w + (x + dx);
          sxx += gx[j] * gx[j];
          syy += gy[j] * gy[j];
          sxy += gx[j] * gy[j];
        }
      const double det = sxx * syy - sxy * sxy;
      const double tr = sxx + syy;
      const double r = det - params.k * tr * tr;
      resp[static_cast<std::size_t>(y) * w + x] = r;
      max_resp = std::max(max_resp, r);
    }
  if (max_resp < 1e-12) return {};

  struct Corner {
    int x, y;
    double r;
  };
  std::vector<Corner> found;
  const double thresh = params.rel_threshold * max_resp;
  const int b = std::max(2, params.border);
  for (int y = b; y < h - b; ++y)
    for (int x = b; x < w - b; ++x) {
      const double r = resp[static_cast<std::size_t>(y) * w + x];
      if (r < thresh) continue;
      bool is_peak = true;
      for (int dy = -1; dy <= 1 && is_peak; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const double rn = resp[static_cast<std::size_t>(y + dy) * w + (x + dx)];
          // Strict on one side so plateau twins cannot both win.
          if (rn > r || (rn == r && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_peak = false;
            break;
          }
        }
      if (is_peak) found.push_back({x, y, r});
    }
  std::sort(found.begin(), found.end(), [](const Corner& a, const Corner& b2) {
    if (a.r != b2.r) return a.r > b2.r;
    return a.y != b2.y ? a.y < b2.y : a.x < b2.x;
  });
  if (static_cast<int>(found.size()) > params.max_corners)
    found.resize(params.max_corners);

  std::vector<Vec2> out;
  out.reserve(found.size());
  for (const Corner& c : found)
    out.push_back({norm_from_pixel(c.x, w), norm_from_pixel(c.y, h)});
  return out;
}

struct MatchParams {
  int patch_radius = 8;     // 17x17 patches
  int search_radius = 12;   // pixels around the prior location
  double ratio = 0.9;       // Lowe-style (1 - ncc) distance ratio cutoff
  double min_ncc = 0.5;
};

namespace detail {

// Zero-normalized patch around an integer pixel; false when flat or the
// patch leaves the frame.
inline bool extract_patch(const Frame& f, int cx, int cy, int radius,
                          std::vector<double>& out) {
  const int d = 2 * radius + 1;
  if (cx < radius || cy < radius || cx + radius >= f.width ||
      cy + radius >= f.height)
    return false;
  out.resize(static_cast<std::size_t>(d) * d);
  double mean = 0.0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const double v = f.at(cx + dx, cy + dy);
      out[static_cast<std::size_t>(dy + radius) * d + (dx + radius)] = v;
      mean += v;
    }
  mean /= static_cast<double>(out.size());
  double var = 0.0;
  for (double& v : out) {
    v -= mean;
    var += v * v;
  }
  if (var < 1e-10) return false;
  const double inv = 1.0 / std::sqrt(var);
  for (double& v : out) v *= inv;
  return true;
}

}  // namespace detail

// For each corner of frame a, finds the best normalized-cross-correlation
// patch match in frame b near the same location. Matches are kept when they
// pass the ratio test ((1-best)/(1-second) < ratio) and an absolute
// correlation floor, then refined to sub-pixel by a parabolic fit.
inline CorrespondenceSet match_patches(const Frame& a, const Frame& b,
                                       const std::vector<Vec2>& pts_a,
                                       const MatchParams& params = {}) {
  if (a.width != b.width || a.height != b.height)
    throw ConfigError("match_patches: frame dims differ");
  CorrespondenceSet out;
  std::vector<double> pa, pb;
  const int R = params.search_radius;
  for (const Vec2& p : pts_a) {
    const int ax = static_cast<int>(std::lround(pixel_from_norm(p.x, a.width)));
    const int ay = static_cast<int>(std::lround(pixel_from_norm(p.y, a.height)));
    if (!detail::extract_patch(a, ax, ay, params.patch_radius, pa)) continue;

    double best = -2.0, second = -2.0;
    int bx = 0, by = 0;
    std::vector<std::vector<double>> ncc_map(
        2 * R + 1, std::vector<double>(2 * R + 1, -2.0));
    for (int dy = -R; dy <= R; ++dy)
      for (int dx = -R; dx <= R; ++dx) {
        if (!detail::extract_patch(b, ax + dx, ay + dy, params.patch_radius, pb))
          continue;
        double ncc = 0.0;
        for (std::size_t i = 0; i < pa.size(); ++i) ncc += pa[i] * pb[i];
        ncc_map[dy + R][dx + R] = ncc;
        if (ncc > best) {
          second = best;
          best = ncc;
          bx = dx;
          by = dy;
        } else if (ncc > second && (std::abs(dx - bx) > 2 || std::abs(dy - by) > 2)) {
          second = ncc;
        }
      }
    if (best < params.min_ncc) continue;
    if (second > -1.5) {
      const double dist_ratio = (1.0 - best) / std::max(1e-12, 1.0 - second);
      if (dist_ratio >= params.ratio) continue;
    }

    // Parabolic sub-pixel refinement on the correlation surface.
    double sub_x = bx, sub_y = by;
    if (bx > -R && bx < R) {
      const double l = ncc_map[by + R][bx + R - 1];
      const double c = best;
      const double r = ncc_map[by + R][bx + R + 1];
      const double den = l - 2 * c + r;
      if (l > -1.5 && r > -1.5 && den < -1e-12)
        sub_x = bx + 0.5 * (l - r) / den;
    }
    if (by > -R && by < R) {
      const double u = ncc_map[by + R - 1][bx + R];
      const double c = best;
      const double d = ncc_map[by + R + 1][bx + R];
      const double den = u - 2 * c + d;
      if (u > -1.5 && d > -1.5 && den < -1e-12)
        sub_y = by + 0.5 * (u - d) / den;
    }

    Match m;
    m.src = {norm_from_pixel(ax, a.width), norm_from_pixel(ay, a.height)};
    m.dst = {norm_from_pixel(ax + sub_x, b.width),
             norm_from_pixel(ay + sub_y, b.height)};
    m.score = best;
    out.push_back(m);
  }
  return out;
}

struct RansacParams {
  int iters = 500;
  double inlier_thresh = 0.0;  // normalized units; must be set by the caller
};

struct RansacResult {
  Homography model;
  std::vector<std::uint32_t> inlier_indices;
};

// Converts a pixel distance into the normalized threshold used by RANSAC.
inline double pixel_thresh_to_norm(double px, int width) {
  return px * 2.0 / std::max(1, width - 1);
}

namespace detail {

inline std::vector<std::uint32_t> inliers_of(const CorrespondenceSet& set,
                                             const Homography& model,
                                             double thresh) {
  std::vector<std::uint32_t> idx;
  const double t2 = thresh * thresh;
  for (std::uint32_t i = 0; i < set.size(); ++i) {
    Vec2 proj;
    try {
      proj = apply(model, set[i].src);
    } catch (const NumericError&) {
      continue;
    }
    const Vec2 r = proj - set[i].dst;
    if (dot(r, r) < t2) idx.push_back(i);
  }
  return idx;
}

// Least-squares fit on a subset, with the subset first brought into a
// canonical order so the result does not depend on input permutation.
inline Homography fit_subset(const CorrespondenceSet& set,
                             const std::vector<std::uint32_t>& idx) {
  std::vector<Vec2> src, dst;
  src.reserve(idx.size());
  dst.reserve(idx.size());
  std::vector<std::uint32_t> order = idx;
  std::sort(order.begin(), order.end(),
            [&set](std::uint32_t a, std::uint32_t b) {
              const Match& ma = set[a];
              const Match& mb = set[b];
              if (ma.src.x != mb.src.x) return ma.src.x < mb.src.x;
              if (ma.src.y != mb.src.y) return ma.src.y < mb.src.y;
              if (ma.dst.x != mb.dst.x) return ma.dst.x < mb.dst.x;
              return ma.dst.y < mb.dst.y;
            });
  for (std::uint32_t i : order) {
    src.push_back(set[i].src);
    dst.push_back(set[i].dst);
  }
  return dlt_fit(src, dst);
}

}  // namespace detail

// Classic 4-point RANSAC followed by least-squares refits on the consensus
// set until the inlier set stops changing.
inline RansacResult ransac_homography(const CorrespondenceSet& set,
                                      const RansacParams& params, Rng& rng) {
  if (set.size() < 4)
    throw ConfigError("ransac_homography: need at least 4 matches");
  if (!(params.inlier_thresh > 0.0))
    throw ConfigError("ransac_homography: inlier threshold not set");

  std::vector<std::uint32_t> best_inliers;
  for (int it = 0; it < params.iters; ++it) {
    std::uint32_t pick[4];
    for (int k = 0; k < 4; ++k) {
      bool fresh;
      do {
        pick[k] = static_cast<std::uint32_t>(rng.below(set.size()));
        fresh = true;
        for (int j = 0; j < k; ++j) fresh &= pick[j] != pick[k];
      } while (!fresh);
    }
    Homography cand;
    try {
      cand = detail::fit_subset(set, {pick, pick + 4});
    } catch (const Error&) {
      continue;  // degenerate minimal sample
    }
    std::vector<std::uint32_t> inl =
        detail::inliers_of(set, cand, params.inlier_thresh);
    if (inl.size() > best_inliers.size()) best_inliers = std::move(inl);
  }
  if (best_inliers.size() < 4)
    throw NumericError("ransac_homography: no consensus found");

  RansacResult res;
  for (int refit = 0; refit < 16; ++refit) {
    res.model = detail::fit_subset(set, best_inliers);
    std::vector<std::uint32_t> inl =
        detail::inliers_of(set, res.model, params.inlier_thresh);
    if (inl.size() < 4)
      throw NumericError("ransac_homography: consensus collapsed on refit");
    if (inl == best_inliers) break;
    best_inliers = std::move(inl);
  }
  res.inlier_indices = std::move(best_inliers);
  return res;
}

struct SubimageMatchParams {
  CornerParams corners;
  MatchParams matching;
  RansacParams ransac;  // inlier_thresh <= 0 means 3 px at the frame width
};

// Correspondences between an unsteady frame and its steady counterpart.
// The frame is split into 2x2 sub-images; corners detected in each quadrant
// of the steady frame are matched into the unsteady frame and filtered by a
// per-quadrant RANSAC. Quadrants without consensus contribute nothing; the
// result is the union of inlier matches (src steady, dst unsteady).
inline CorrespondenceSet subimage_match(const Frame& unsteady,
                                        const Frame& steady, Rng& rng,
                                        const SubimageMatchParams& params = {}) {
  if (unsteady.width != steady.width || unsteady.height != steady.height)
    throw ConfigError("subimage_match: frame dims differ");
  RansacParams rp = params.ransac;
  if (rp.inlier_thresh <= 0.0)
    rp.inlier_thresh = pixel_thresh_to_norm(3.0, steady.width);

  const std::vector<Vec2> corners = detect_corners(steady, params.corners);
  CorrespondenceSet out;
  for (int q = 0; q < 4; ++q) {
    const bool right = q & 1;
    const bool bottom = q & 2;
    std::vector<Vec2> quad_pts;
    for (const Vec2& p : corners) {
      if ((p.x >= 0.0) == right && (p.y >= 0.0) == bottom)
        quad_pts.push_back(p);
    }
    if (quad_pts.size() < 4) continue;
    const CorrespondenceSet cand =
        match_patches(steady, unsteady, quad_pts, params.matching);
    if (cand.size() < 4) continue;
    Rng qrng = rng.split(static_cast<std::uint64_t>(q));
    try {
      const RansacResult rr = ransac_homography(cand, rp, qrng);
      for (std::uint32_t i : rr.inlier_indices) out.push_back(cand[i]);
    } catch (const Error&) {
      continue;
    }
  }
  if (out.empty())
    throw NumericError("subimage_match: all sub-images failed to match");
  return out;
}

// Dense displacement field in normalized units: content for output location
// q is found at q + flow(q).
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<double> dx;
  std::vector<double> dy;
  std::vector<std::uint8_t> mask;

  FlowField() = default;
  FlowField(int w, int h)
      : width(w), height(h),
        dx(static_cast<std::size_t>(w) * h, 0.0),
        dy(static_cast<std::size_t>(w) * h, 0.0),
        mask(static_cast<std::size_t>(w) * h, 1) {
    if (w <= 0 || h <= 0) throw ConfigError("FlowField: non-positive dims");
  }

  std::size_t size() const { return dx.size(); }
};

// Exact flow between two frames rendered by camera transforms warp_prev and
// warp_next (each mapping frame coordinates into a shared scene):
// flow(q) = apply(invert(warp_prev) * warp_next, q) - q.
inline FlowField synthetic_flow(const Homography& warp_prev,
                                const Homography& warp_next, int w, int h) {
  FlowField flow(w, h);
  const Homography rel = compose(invert(warp_prev), warp_next);
  for (int y = 0; y < h; ++y) {
    const double ny = norm_from_pixel(y, h);
    for (int x = 0; x < w; ++x) {
      const double nx = norm_from_pixel(x, w);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double den = rel[6] * nx + rel[7] * ny + 1.0;
      if (std::abs(den) < detail::kDenEps) {
        flow.mask[i] = 0;
        continue;
      }
      const double inv = 1.0 / den;
      flow.dx[i] = (rel[0] * nx + rel[1] * ny + rel[2]) * inv - nx;
      flow.dy[i] = (rel[3] * nx + rel[4] * ny + rel[5]) * inv - ny;
    }
  }
  return flow;
}

struct BlockFlowParams {
  int block = 8;
  int radius = 4;            // search radius in pixels
  double margin = 1e-6;      // per-pixel SAD gap required for a unique winner
};

// Integer block-matching flow from prev to next: for each block of next,
// finds the displacement into prev minimizing the sum of absolute
// differences, then bilinearly upsamples block displacements to a dense
// field. warp_with_flow(prev, flow) approximates next.
inline FlowField block_matching_flow(const Frame& prev, const Frame& next,
                                     const BlockFlowParams& params = {}) {
  if (prev.width != next.width || prev.height != next.height)
    throw ConfigError("block_matching_flow: frame dims differ");
  const int w = prev.width, h = prev.height;
  const int bs = params.block;
  if (bs <= 0 || bs > std::min(w, h))
    throw ConfigError("block_matching_flow: bad block size");
  const int bw = w / bs, bh = h / bs;
  if (bw < 1 || bh < 1)
    throw ConfigError("block_matching_flow: frame smaller than one block");

  std::vector<double> bdx(static_cast<std::size_t>(bw) * bh, 0.0);
  std::vector<double> bdy(static_cast<std::size_t>(bw) * bh, 0.0);
  std::vector<std::uint8_t> bok(static_cast<std::size_t>(bw) * bh, 1);
  const int R = params.radius;
  for (int by = 0; by < bh; ++by)
    for (int bx = 0; bx < bw; ++bx) {
      const int x0 = bx * bs, y0 = by * bs;
      double best = 1e300, second = 1e300;
      int best_dx = 0, best_dy = 0;
      // Rings of growing radius so zero displacement wins exact ties.
      for (int ring = 0; ring <= R; ++ring)
        for (int dy = -ring; dy <= ring; ++dy)
          for (int dx = -ring; dx <= ring; ++dx) {
            if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
            if (x0 + dx < 0 || y0 + dy < 0 || x0 + dx + bs > w ||
                y0 + dy + bs > h)
              continue;
            double sad = 0.0;
            for (int yy = 0; yy < bs; ++yy)
              for (int xx = 0; xx < bs; ++xx)
                sad += std::abs(next.at(x0 + xx, y0 + yy) -
                                prev.at(x0 + dx + xx, y0 + dy + yy));
            if (sad < best) {
              if (std::abs(dx - best_dx) > 1 || std::abs(dy - best_dy) > 1)
                second = best;
              best = sad;
              best_dx = dx;
              best_dy = dy;
            } else if (sad < second && (std::abs(dx - best_dx) > 1 ||
                                        std::abs(dy - best_dy) > 1)) {
              second = sad;
            }
          }
      const std::size_t bi = static_cast<std::size_t>(by) * bw + bx;
      bdx[bi] = best_dx * 2.0 / std::max(1, w - 1);
      bdy[bi] = best_dy * 2.0 / std::max(1, h - 1);
      if (R > 0 && second - best < params.margin * bs * bs) bok[bi] = 0;
    }

  // Dense field by bilinear interpolation between block centers.
  FlowField flow(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double bxf = std::clamp((x - (bs - 1) * 0.5) / bs, 0.0,
                                    static_cast<double>(bw - 1));
      const double byf = std::clamp((y - (bs - 1) * 0.5) / bs, 0.0,
                                    static_cast<double>(bh - 1));
      const int cx0 = std::min(static_cast<int>(bxf), bw - 1);
      const int cy0 = std::min(static_cast<int>(byf), bh - 1);
      const int cx1 = std::min(cx0 + 1, bw - 1);
      const int cy1 = std::min(cy0 + 1, bh - 1);
      const double fx = bxf - cx0, fy = byf - cy0;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      auto bi = [bw](int xx, int yy) {
        return static_cast<std::size_t>(yy) * bw + xx;
      };
      flow.dx[i] = bdx[bi(cx0, cy0)] * (1 - fx) * (1 - fy) +
                   bdx[bi(cx1, cy0)] * fx * (1 - fy) +
                   bdx[bi(cx0, cy1)] * (1 - fx) * fy +
                   bdx[bi(cx1, cy1)] * fx * fy;
      flow.dy[i] = bdy[bi(cx0, cy0)] * (1 - fx) * (1 - fy) +
                   bdy[bi(cx1, cy0)] * fx * (1 - fy) +
                   bdy[bi(cx0, cy1)] * (1 - fx) * fy +
                   bdy[bi(cx1, cy1)] * fx * fy;
      flow.mask[i] = bok[bi(cx0, cy0)] & bok[bi(cx1, cy0)] &
                     bok[bi(cx0, cy1)] & bok[bi(cx1, cy1)];
    }
  return flow;
}

// Pulls f along the flow: out(q) = f(q + flow(q)). Pixels with invalid flow
// or out-of-range sources become invalid zeros.
inline Frame warp_with_flow(const Frame& f, const FlowField& flow) {
  if (f.width != flow.width || f.height != flow.height)
    throw ConfigError("warp_with_flow: dims differ");
  Frame out(f.width, f.height);
  for (int y = 0; y < f.height; ++y) {
    const double ny = norm_from_pixel(y, f.height);
    for (int x = 0; x < f.width; ++x) {
      const double nx = norm_from_pixel(x, f.width);
      const std::size_t i = static_cast<std::size_t>(y) * f.width + x;
      if (!flow.mask[i]) {
        out.mask[i] = 0;
        continue;
      }
      const SampleResult sr =
          bilinear_sample(f, {nx + flow.dx[i], ny + flow.dy[i]});
      out.data[i] = sr.value;
      out.mask[i] = sr.valid ? 1 : 0;
    }
  }
  return out;
}

}  // namespace stabkit

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stabkit/common.hpp"
#include "stabkit/geometry.hpp"

namespace stabkit {

// Single-channel image. Intensities live in [0, 1]; data is row-major.
// mask[i] != 0 marks a pixel as carrying real content. Warping fills pixels
// whose source falls outside the frame with 0 and clears their mask bit.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<double> data;
  std::vector<std::uint8_t> mask;

  Frame() = default;
  Frame(int w, int h)
      : width(w), height(h),
        data(static_cast<std::size_t>(w) * h, 0.0),
        mask(static_cast<std::size_t>(w) * h, 1) {
    if (w <= 0 || h <= 0) throw ConfigError("Frame: non-positive dims");
  }

  std::size_t size() const { return data.size(); }
  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool valid(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }
};

struct SampleResult {
  double value = 0.0;
  double dx = 0.0;  // d(value)/d(px) in normalized units
  double dy = 0.0;
  bool valid = false;
};

// Both image axes are normalized to [-1, 1], with -1 and 1 on the centers of
// the first and last pixel (so a W-pixel row spans W-1 cells).
inline double pixel_from_norm(double v, int extent) {
  return (v + 1.0) * 0.5 * (extent - 1);
}
inline double norm_from_pixel(double p, int extent) {
  if (extent <= 1) return 0.0;
  return p * 2.0 / (extent - 1) - 1.0;
}

// Bilinear lookup at a normalized point. Out-of-range points (any coordinate
// beyond [-1, 1]) give value 0 and valid = false. The gradient is the local
// slope of the interpolant per unit of normalized coordinate.
inline SampleResult bilinear_sample(const Frame& f, Vec2 p) {
  SampleResult r;
  if (!(p.x >= -1.0 && p.x <= 1.0 && p.y >= -1.0 && p.y <= 1.0)) return r;
  r.valid = true;
  const double px = pixel_from_norm(p.x, f.width);
  const double py = pixel_from_norm(p.y, f.height);
  int x0 = static_cast<int>(std::floor(px));
  int y0 = static_cast<int>(std::floor(py));
  x0 = std::clamp(x0, 0, std::max(0, f.width - 2));
  y0 = std::clamp(y0, 0, std::max(0, f.height - 2));
  const int x1 = std::min(x0 + 1, f.width - 1);
  const int y1 = std::min(y0 + 1, f.height - 1);
  const double fx = px - x0;
  const double fy = py - y0;
  const double v00 = f.at(x0, y0), v10 = f.at(x1, y0);
  const double v01 = f.at(x0, y1), v11 = f.at(x1, y1);
  r.value = v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy) +
            v01 * (1 - fx) * fy + v11 * fx * fy;
  const double ddpx = (v10 - v00) * (1 - fy) + (v11 - v01) * fy;
  const double ddpy = (v01 - v00) * (1 - fx) + (v11 - v10) * fx;
  r.dx = f.width > 1 ? ddpx * 0.5 * (f.width - 1) : 0.0;
  r.dy = f.height > 1 ? ddpy * 0.5 * (f.height - 1) : 0.0;
  return r;
}

// Renders a width x height view of f through the sampling map g: output
// location q (on the output's normalized grid) shows f at apply(g, q).
inline Frame render_view(const Frame& f, const Homography& g, int width,
                         int height) {
  Frame out(width, height);
  for (int y = 0; y < height; ++y) {
    const double ny = norm_from_pixel(y, height);
    for (int x = 0; x < width; ++x) {
      const double nx = norm_from_pixel(x, width);
      const double den = g[6] * nx + g[7] * ny + 1.0;
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      if (std::abs(den) < detail::kDenEps) {
        out.mask[i] = 0;
        continue;
      }
      const double inv = 1.0 / den;
      const Vec2 s{(g[0] * nx + g[1] * ny + g[2]) * inv,
                   (g[3] * nx + g[4] * ny + g[5]) * inv};
      const SampleResult sr = bilinear_sample(f, s);
      out.data[i] = sr.value;
      out.mask[i] = sr.valid ? 1 : 0;
    }
  }
  return out;
}

// Resamples f so that output location q shows f at apply(g, q). An exact
// identity transform is passed through without resampling.
inline Frame warp_frame(const Frame& f, const Homography& g) {
  if (g == Homography::identity()) {
    Frame out(f.width, f.height);
    out.data = f.data;
    return out;
  }
  return render_view(f, g, f.width, f.height);
}

// Per-pixel derivative of warp_frame's output with respect to the eight
// transform parameters. Slice k is d(out)/d(g[k]) over the full frame.
struct WarpJacobian {
  int width = 0;
  int height = 0;
  std::vector<double> d;  // [8][height][width]

  double at(int k, int x, int y) const {
    return d[(static_cast<std::size_t>(k) * height + y) * width + x];
  }
};

struct WarpWithJacobianResult {
  Frame frame;
  WarpJacobian jac;
};

inline WarpWithJacobianResult warp_with_jacobian(const Frame& f,
                                                 const Homography& g) {
  WarpWithJacobianResult out;
  out.frame = Frame(f.width, f.height);
  out.jac.width = f.width;
  out.jac.height = f.height;
  out.jac.d.assign(8 * f.size(), 0.0);
  const std::size_t plane = f.size();
  for (int y = 0; y < f.height; ++y) {
    const double ny = norm_from_pixel(y, f.height);
    for (int x = 0; x < f.width; ++x) {
      const double nx = norm_from_pixel(x, f.width);
      const double den = g[6] * nx + g[7] * ny + 1.0;
      const std::size_t i = static_cast<std::size_t>(y) * f.width + x;
      if (std::abs(den) < detail::kDenEps) {
        out.frame.mask[i] = 0;
        continue;
      }
      const double inv = 1.0 / den;
      const Vec2 s{(g[0] * nx + g[1] * ny + g[2]) * inv,
                   (g[3] * nx + g[4] * ny + g[5]) * inv};
      const SampleResult sr = bilinear_sample(f, s);
      out.frame.data[i] = sr.value;
      out.frame.mask[i] = sr.valid ? 1 : 0;
      if (!sr.valid) continue;
      // d(sx)/dh = [x, y, 1, 0, 0, 0, -sx*x, -sx*y] / den, and the same
      // pattern for sy; chain with the sampled image gradient.
      const double gx = sr.dx * inv;
      const double gy = sr.dy * inv;
      double* base = out.jac.d.data() + i;
      base[0 * plane] = gx * nx;
      base[1 * plane] = gx * ny;
      base[2 * plane] = gx;
      base[3 * plane] = gy * nx;
      base[4 * plane] = gy * ny;
      base[5 * plane] = gy;
      base[6 * plane] = -(gx * s.x + gy * s.y) * nx;
      base[7 * plane] = -(gx * s.x + gy * s.y) * ny;
    }
  }
  return out;
}

namespace detail {

// One resampling pass along x. Shrinking uses coverage-weighted averaging,
// growing uses linear interpolation between source pixel centers.
inline void resample_rows(const std::vector<double>& src, int sw, int sh,
                          std::vector<double>& dst, int dw) {
  dst.assign(static_cast<std::size_t>(dw) * sh, 0.0);
  if (dw == sw) {
    dst = src;
    return;
  }
  if (dw < sw) {
    const double ratio = static_cast<double>(sw) / dw;
    for (int y = 0; y < sh; ++y) {
      const double* in = src.data() + static_cast<std::size_t>(y) * sw;
      double* out = dst.data() + static_cast<std::size_t>(y) * dw;
      for (int x = 0; x < dw; ++x) {
        const double a = x * ratio;
        const double b = (x + 1) * ratio;
        double acc = 0.0;
        for (int s = static_cast<int>(a); s < sw && s < b; ++s) {
          const double cover = std::min<double>(b, s + 1) - std::max<double>(a, s);
          acc += in[s] * cover;
        }
        out[x] = acc / ratio;
      }
    }
  } else {
    for (int y = 0; y < sh; ++y) {
      const double* in = src.data() + static_cast<std::size_t>(y) * sw;
      double* out = dst.data() + static_cast<std::size_t>(y) * dw;
      for (int x = 0; x < dw; ++x) {
        const double p = dw > 1 ? static_cast<double>(x) * (sw - 1) / (dw - 1) : 0.0;
        const int x0 = std::min(static_cast<int>(p), sw - 1);
        const int x1 = std::min(x0 + 1, sw - 1);
        const double t = p - x0;
        out[x] = in[x0] * (1 - t) + in[x1] * t;
      }
    }
  }
}

inline std::vector<double> transpose(const std::vector<double>& src, int w, int h) {
  std::vector<double> out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out[static_cast<std::size_t>(x) * h + y] = src[static_cast<std::size_t>(y) * w + x];
  return out;
}

}  // namespace detail

// Separable resize: per-axis area averaging when shrinking, bilinear when
// growing. Equal dims return a copy. Output pixels are valid only where all
// contributing source pixels are valid.
inline Frame resize(const Frame& f, int w, int h) {
  if (w <= 0 || h <= 0) throw ConfigError("resize: non-positive target dims");
  if (w == f.width && h == f.height) return f;
  Frame out(w, h);

  std::vector<double> tmp;
  detail::resample_rows(f.data, f.width, f.height, tmp, w);
  std::vector<double> t = detail::transpose(tmp, w, f.height);
  std::vector<double> tmp2;
  detail::resample_rows(t, f.height, w, tmp2, h);
  out.data = detail::transpose(tmp2, h, w);

  std::vector<double> moved(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) moved[i] = f.mask[i] ? 1.0 : 0.0;
  detail::resample_rows(moved, f.width, f.height, tmp, w);
  t = detail::transpose(tmp, w, f.height);
  detail::resample_rows(t, f.height, w, tmp2, h);
  std::vector<double> mres = detail::transpose(tmp2, h, w);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.mask[i] = mres[i] > 0.999 ? 1 : 0;
  return out;
}

struct CropRect {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;
};

// Largest axis-aligned rectangle centered on the frame that contains only
// valid pixels in every supplied mask. Centered means symmetric insets, so
// the rectangle is [x0, W-1-x0] x [y0, H-1-y0].
inline CropRect valid_crop(const std::vector<const Frame*>& frames) {
  if (frames.empty()) throw ConfigError("valid_crop: no frames");
  const int w = frames[0]->width;
  const int h = frames[0]->height;
  for (const Frame* f : frames)
    if (f->width != w || f->height != h)
      throw ConfigError("valid_crop: mismatched frame dims");

  std::vector<std::uint8_t> all(static_cast<std::size_t>(w) * h, 1);
  for (const Frame* f : frames)
    for (std::size_t i = 0; i < all.size(); ++i)
      all[i] = all[i] & f->mask[i];

  // Minimal symmetric x-inset per row.
  std::vector<int> row_inset(h, 0);
  for (int y = 0; y < h; ++y) {
    int inset = 0;
    const std::uint8_t* row = all.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x)
      if (!row[x]) inset = std::max(inset, std::min(x + 1, w - x));
    row_inset[y] = inset;
  }

  const int max_yin = (h - 1) / 2;
  const int max_xin = (w - 1) / 2;
  // Grow the row window outward from the middle, tracking the inset it needs.
  std::vector<int> need(max_yin + 1, 0);
  int acc = 0;
  for (int yin = max_yin; yin >= 0; --yin) {
    acc = std::max(acc, row_inset[yin]);
    acc = std::max(acc, row_inset[h - 1 - yin]);
    need[yin] = acc;
  }
  // Scan outermost first so area ties resolve to the tallest rectangle.
  long best_area = -1;
  CropRect best;
  for (int yin = 0; yin <= max_yin; ++yin) {
    if (need[yin] > max_xin) continue;
    const long area = static_cast<long>(w - 2 * need[yin]) * (h - 2 * yin);
    if (area > best_area) {
      best_area = area;
      best = {need[yin], yin, w - 2 * need[yin], h - 2 * yin};
    }
  }
  if (best_area <= 0)
    throw NumericError("valid_crop: no valid centered rectangle");
  return best;
}

inline Frame apply_crop(const Frame& f, const CropRect& r) {
  if (r.width <= 0 || r.height <= 0 || r.x0 < 0 || r.y0 < 0 ||
      r.x0 + r.width > f.width || r.y0 + r.height > f.height)
    throw ConfigError("apply_crop: rectangle out of bounds");
  Frame out(r.width, r.height);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) {
      out.at(x, y) = f.at(r.x0 + x, r.y0 + y);
      out.mask[static_cast<std::size_t>(y) * r.width + x] =
          f.mask[static_cast<std::size_t>(r.y0 + y) * f.width + (r.x0 + x)];
    }
  return out;
}

}  // namespace stabkit

#pragma once

// Shared test helpers. The Mat3 oracle below deliberately reimplements 3x3
// projective algebra with plain arrays so library results can be checked
// against an independent computation.

#include <unistd.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stabkit/geometry.hpp"
#include "stabkit/image.hpp"
#include "stabkit/rng.hpp"

namespace testutil {

struct Mat3 {
  double m[9];

  static Mat3 from_h(const stabkit::Homography& g) {
    return Mat3{{g[0], g[1], g[2], g[3], g[4], g[5], g[6], g[7], 1.0}};
  }

  static Mat3 identity() { return Mat3{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }

  Mat3 mul(const Mat3& o) const {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
        r.m[i * 3 + j] = s;
      }
    return r;
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  Mat3 inv() const {
    const double d = det();
    Mat3 r{};
    r.m[0] = (m[4] * m[8] - m[5] * m[7]) / d;
    r.m[1] = (m[2] * m[7] - m[1] * m[8]) / d;
    r.m[2] = (m[1] * m[5] - m[2] * m[4]) / d;
    r.m[3] = (m[5] * m[6] - m[3] * m[8]) / d;
    r.m[4] = (m[0] * m[8] - m[2] * m[6]) / d;
    r.m[5] = (m[2] * m[3] - m[0] * m[5]) / d;
    r.m[6] = (m[3] * m[7] - m[4] * m[6]) / d;
    r.m[7] = (m[1] * m[6] - m[0] * m[7]) / d;
    r.m[8] = (m[0] * m[4] - m[1] * m[3]) / d;
    return r;
  }

  stabkit::Vec2 apply(stabkit::Vec2 p) const {
    const double w = m[6] * p.x + m[7] * p.y + m[8];
    return {(m[0] * p.x + m[1] * p.y + m[2]) / w,
            (m[3] * p.x + m[4] * p.y + m[5]) / w};
  }

  stabkit::Homography to_h() const {
    stabkit::Homography g;
    for (int i = 0; i < 8; ++i) g[i] = m[i] / m[8];
    return g;
  }
};

// Smooth band-limited image: a few low-frequency sinusoids, optionally
// tapered to zero at the border so that out-of-frame zero fill continues
// the image with a continuous derivative.
inline stabkit::Frame smooth_frame(int w, int h, stabkit::Rng& rng,
                                   bool taper = false) {
  stabkit::Frame f(w, h);
  struct Wave { double ax, ay, ph, amp; };
  std::array<Wave, 4> waves;
  for (Wave& wv : waves) {
    wv.ax = rng.uniform(-2.0, 2.0);
    wv.ay = rng.uniform(-2.0, 2.0);
    wv.ph = rng.uniform(0.0, 6.28318530717958648);
    wv.amp = rng.uniform(0.05, 0.11);
  }
  for (int y = 0; y < h; ++y) {
    const double ny = stabkit::norm_from_pixel(y, h);
    for (int x = 0; x < w; ++x) {
      const double nx = stabkit::norm_from_pixel(x, w);
      double v = 0.5;
      for (const Wave& wv : waves)
        v += wv.amp * std::sin(3.14159265358979 * (wv.ax * nx + wv.ay * ny) + wv.ph);
      if (taper) {
        const double tx = std::cos(0.5 * 3.14159265358979 * nx);
        const double ty = std::cos(0.5 * 3.14159265358979 * ny);
        v *= tx * tx * ty * ty;
      }
      f.at(x, y) = std::min(0.98, std::max(0.02, v));
    }
  }
  return f;
}

// Smooth frame with a Gaussian blob scattered into each 12x12 cell, giving
// strong corner features everywhere — closer to the rendered scenes the
// matching pipeline is meant for than a purely low-frequency image.
inline stabkit::Frame textured_frame(int w, int h, stabkit::Rng& rng) {
  stabkit::Frame f = smooth_frame(w, h, rng);
  const int cell = 12;
  for (int cy = 0; cy + cell <= h; cy += cell) {
    for (int cx = 0; cx + cell <= w; cx += cell) {
      const int bx = cx + 2 + static_cast<int>(rng.below(cell - 4));
      const int by = cy + 2 + static_cast<int>(rng.below(cell - 4));
      const double amp =
          rng.uniform(0.25, 0.45) * (rng.below(2) ? 1.0 : -1.0);
      const double sigma = rng.uniform(0.8, 1.6);
      for (int dy = -3; dy <= 3; ++dy) {
        for (int dx = -3; dx <= 3; ++dx) {
          const int x = bx + dx, y = by + dy;
          if (x < 0 || y < 0 || x >= w || y >= h) continue;
          f.at(x, y) +=
              amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
      }
    }
  }
  for (double& v : f.data) v = std::min(0.98, std::max(0.02, v));
  return f;
}

// Random transform near the identity, small enough that warped content
// mostly stays in frame.
inline stabkit::Homography small_random_h(stabkit::Rng& rng,
                                          double t_amp = 0.05,
                                          double lin_amp = 0.03,
                                          double proj_amp = 0.01) {
  stabkit::Homography g;
  g[0] = 1.0 + rng.uniform(-lin_amp, lin_amp);
  g[1] = rng.uniform(-lin_amp, lin_amp);
  g[2] = rng.uniform(-t_amp, t_amp);
  g[3] = rng.uniform(-lin_amp, lin_amp);
  g[4] = 1.0 + rng.uniform(-lin_amp, lin_amp);
  g[5] = rng.uniform(-t_amp, t_amp);
  g[6] = rng.uniform(-proj_amp, proj_amp);
  g[7] = rng.uniform(-proj_amp, proj_amp);
  return g;
}

// Hash of the piecewise-smoothness cell pattern of a warp: which bilinear
// cell each output pixel samples and whether it is in range. Central finite
// differences of a warp-based loss are only trustworthy when this pattern is
// identical at both evaluation points, since the interpolant has slope
// breaks at cell boundaries and a value break at the frame border.
inline std::uint64_t warp_cell_pattern(const stabkit::Frame& f,
                                       const stabkit::Homography& g) {
  std::uint64_t hash = 1469598103934665603ull;
  auto feed = [&hash](std::uint64_t v) {
    hash ^= v;
    hash *= 1099511628211ull;
  };
  for (int y = 0; y < f.height; ++y) {
    const double ny = stabkit::norm_from_pixel(y, f.height);
    for (int x = 0; x < f.width; ++x) {
      const double nx = stabkit::norm_from_pixel(x, f.width);
      const double den = g[6] * nx + g[7] * ny + 1.0;
      if (std::abs(den) < 1e-12) {
        feed(0xdead);
        continue;
      }
      const double sx = (g[0] * nx + g[1] * ny + g[2]) / den;
      const double sy = (g[3] * nx + g[4] * ny + g[5]) / den;
      const bool valid = sx >= -1 && sx <= 1 && sy >= -1 && sy <= 1;
      if (!valid) {
        feed(0xbeef);
        continue;
      }
      const int cx = static_cast<int>(std::floor(stabkit::pixel_from_norm(sx, f.width)));
      const int cy = static_cast<int>(std::floor(stabkit::pixel_from_norm(sy, f.height)));
      feed((static_cast<std::uint64_t>(cx) << 20) ^ static_cast<std::uint64_t>(cy) ^ (1ull << 63));
    }
  }
  return hash;
}

// Cell pattern of sampling positions q + flow(q) into a frame.
inline std::uint64_t flow_cell_pattern(const stabkit::Frame& f, int w, int h,
                                       const std::vector<double>& fx,
                                       const std::vector<double>& fy) {
  std::uint64_t hash = 1469598103934665603ull;
  auto feed = [&hash](std::uint64_t v) {
    hash ^= v;
    hash *= 1099511628211ull;
  };
  for (int y = 0; y < h; ++y) {
    const double ny = stabkit::norm_from_pixel(y, h);
    for (int x = 0; x < w; ++x) {
      const double nx = stabkit::norm_from_pixel(x, w);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double sx = nx + fx[i];
      const double sy = ny + fy[i];
      const bool valid = sx >= -1 && sx <= 1 && sy >= -1 && sy <= 1;
      if (!valid) {
        feed(0xbeef);
        continue;
      }
      const int cx = static_cast<int>(std::floor(stabkit::pixel_from_norm(sx, f.width)));
      const int cy = static_cast<int>(std::floor(stabkit::pixel_from_norm(sy, f.height)));
      feed((static_cast<std::uint64_t>(cx) << 20) ^ static_cast<std::uint64_t>(cy) ^ (1ull << 63));
    }
  }
  return hash;
}

// Fresh scratch directory under the build tree.
inline std::string scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("stabkit_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace testutil

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "stabkit/common.hpp"
#include "stabkit/rng.hpp"

namespace stabkit {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

// Plane-projective transform with eight free parameters. The implied 3x3
// matrix is
//   [ h[0] h[1] h[2] ]
//   [ h[3] h[4] h[5] ]
//   [ h[6] h[7]  1   ]
// acting on homogeneous points in normalized [-1,1] image coordinates.
// Warping treats this as the map from output locations to source locations.
struct Homography {
  std::array<double, 8> h{1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0};

  static Homography identity() { return Homography{}; }

  double& operator[](std::size_t i) { return h[i]; }
  double operator[](std::size_t i) const { return h[i]; }

  bool operator==(const Homography& o) const { return h == o.h; }
};

// Lower/upper bounds for uniform per-parameter sampling.
struct PerturbationRange {
  std::array<double, 8> lo;
  std::array<double, 8> hi;

  // Border-augmentation bounds: diagonal in [0.9, 1.1], shear and projective
  // terms in [-0.1, 0.1], translations in [-0.5, 0.5].
  static PerturbationRange defaults() {
    return {{0.9, -0.1, -0.5, -0.1, 0.9, -0.5, -0.1, -0.1},
            {1.1, 0.1, 0.5, 0.1, 1.1, 0.5, 0.1, 0.1}};
  }
};

// Per-frame accumulated camera transforms; path[0] is the identity.
using CameraPath = std::vector<Homography>;

struct HomographyDecomposition {
  double scale = 1.0;            // sqrt(|det|) of the 2x2 linear block
  double rotation_angle = 0.0;   // radians, from the polar factor
  Vec2 translation;              // (h[2], h[5])
  double sigma1 = 1.0;           // larger singular value of the linear block
  double sigma2 = 1.0;           // smaller singular value
};

namespace detail {

constexpr double kDenEps = 1e-12;

inline void mat3_from_h(const Homography& g, double m[9]) {
  m[0] = g[0]; m[1] = g[1]; m[2] = g[2];
  m[3] = g[3]; m[4] = g[4]; m[5] = g[5];
  m[6] = g[6]; m[7] = g[7]; m[8] = 1.0;
}

inline Homography h_from_mat3(const double m[9], const char* who) {
  if (std::abs(m[8]) < kDenEps)
    throw NumericError(std::string(who) + ": vanishing projective scale");
  Homography g;
  const double inv = 1.0 / m[8];
  for (int i = 0; i < 8; ++i) g[i] = m[i] * inv;
  return g;
}

inline double det3(const double m[9]) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

// Cyclic Jacobi eigensolver for a symmetric n x n matrix (n <= 9 here).
// a is row-major and gets destroyed; eigenvectors land in v's columns.
inline void jacobi_eigen(double* a, double* v, double* eig, int n) {
  for (int i = 0; i < n * n; ++i) v[i] = 0.0;
  for (int i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) eig[i] = a[i * n + i];
}

struct PointNormalization {
  // x' = s * (x - cx), y' = s * (y - cy)
  double s = 1.0, cx = 0.0, cy = 0.0;
};

inline PointNormalization hartley_normalize(const std::vector<Vec2>& pts) {
  PointNormalization n;
  double cx = 0.0, cy = 0.0;
  for (const Vec2& p : pts) { cx += p.x; cy += p.y; }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const Vec2& p : pts)
    mean_dist += std::hypot(p.x - cx, p.y - cy);
  mean_dist /= static_cast<double>(pts.size());
  n.cx = cx;
  n.cy = cy;
  n.s = mean_dist > 1e-15 ? std::sqrt(2.0) / mean_dist : 1.0;
  return n;
}

}  // namespace detail

// Applies g to a point. Throws NumericError when the projective denominator
// vanishes (point maps to infinity).
inline Vec2 apply(const Homography& g, Vec2 p) {
  const double den = g[6] * p.x + g[7] * p.y + 1.0;
  if (std::abs(den) < detail::kDenEps)
    throw NumericError("apply: degenerate projective denominator");
  const double inv = 1.0 / den;
  return {(g[0] * p.x + g[1] * p.y + g[2]) * inv,
          (g[3] * p.x + g[4] * p.y + g[5]) * inv};
}

// Returns the transform equivalent to applying b first, then a:
// apply(compose(a, b), p) == apply(a, apply(b, p)).
inline Homography compose(const Homography& a, const Homography& b) {
  double ma[9], mb[9], mc[9];
  detail::mat3_from_h(a, ma);
  detail::mat3_from_h(b, mb);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      mc[r * 3 + c] = ma[r * 3 + 0] * mb[0 * 3 + c] +
                      ma[r * 3 + 1] * mb[1 * 3 + c] +
                      ma[r * 3 + 2] * mb[2 * 3 + c];
  return detail::h_from_mat3(mc, "compose");
}

inline Homography invert(const Homography& g) {
  double m[9];
  detail::mat3_from_h(g, m);
  const double det = detail::det3(m);
  if (std::abs(det) < detail::kDenEps)
    throw NumericError("invert: singular homography");
  double adj[9];
  adj[0] = m[4] * m[8] - m[5] * m[7];
  adj[1] = m[2] * m[7] - m[1] * m[8];
  adj[2] = m[1] * m[5] - m[2] * m[4];
  adj[3] = m[5] * m[6] - m[3] * m[8];
  adj[4] = m[0] * m[8] - m[2] * m[6];
  adj[5] = m[2] * m[3] - m[0] * m[5];
  adj[6] = m[3] * m[7] - m[4] * m[6];
  adj[7] = m[1] * m[6] - m[0] * m[7];
  adj[8] = m[0] * m[4] - m[1] * m[3];
  return detail::h_from_mat3(adj, "invert");
}

// Direct linear transform: least-squares fit of g with apply(g, src[i])
// close to dst[i]. Points are Hartley-normalized, the homogeneous 2m x 9
// system is solved through the smallest eigenvector of A^T A, and the result
// is de-normalized. Needs m >= 4 with no 3 source points collinear.
inline Homography dlt_fit(const std::vector<Vec2>& src,
                          const std::vector<Vec2>& dst) {
  if (src.size() != dst.size())
    throw ConfigError("dlt_fit: src/dst size mismatch");
  const std::size_t m = src.size();
  if (m < 4) throw ConfigError("dlt_fit: need at least 4 point pairs");

  const detail::PointNormalization ns = detail::hartley_normalize(src);
  const detail::PointNormalization nd = detail::hartley_normalize(dst);

  // Accumulate A^T A directly; rows come in pairs per correspondence.
  double ata[81] = {0};
  auto add_row = [&ata](const double* row) {
    for (int i = 0; i < 9; ++i)
      for (int j = i; j < 9; ++j) ata[i * 9 + j] += row[i] * row[j];
  };
  for (std::size_t k = 0; k < m; ++k) {
    const double x = ns.s * (src[k].x - ns.cx);
    const double y = ns.s * (src[k].y - ns.cy);
    const double u = nd.s * (dst[k].x - nd.cx);
    const double v = nd.s * (dst[k].y - nd.cy);
    const double r1[9] = {x, y, 1, 0, 0, 0, -u * x, -u * y, -u};
    const double r2[9] = {0, 0, 0, x, y, 1, -v * x, -v * y, -v};
    add_row(r1);
    add_row(r2);
  }
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < i; ++j) ata[i * 9 + j] = ata[j * 9 + i];

  double vecs[81], eig[9];
  detail::jacobi_eigen(ata, vecs, eig, 9);
  int lo = 0, lo2 = -1;
  for (int i = 1; i < 9; ++i) {
    if (eig[i] < eig[lo]) { lo2 = lo; lo = i; }
    else if (lo2 < 0 || eig[i] < eig[lo2]) lo2 = i;
  }
  double max_eig = 0.0;
  for (int i = 0; i < 9; ++i) max_eig = std::max(max_eig, std::abs(eig[i]));
  // Two (near-)zero eigenvalues mean the solution is not unique, which is
  // what collinear or repeated points produce.
  if (max_eig <= 0.0 || std::abs(eig[lo2]) < 1e-12 * max_eig)
    throw NumericError("dlt_fit: degenerate point configuration");

  double hn[9];
  for (int i = 0; i < 9; ++i) hn[i] = vecs[i * 9 + lo];

  // De-normalize: H = T_dst^{-1} * Hn * T_src.
  const double ts[9] = {ns.s, 0, -ns.s * ns.cx, 0, ns.s, -ns.s * ns.cy,
                        0, 0, 1};
  const double tdi[9] = {1.0 / nd.s, 0, nd.cx, 0, 1.0 / nd.s, nd.cy,
                         0, 0, 1};
  double tmp[9], out[9];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      tmp[r * 3 + c] = hn[r * 3 + 0] * ts[0 * 3 + c] +
                       hn[r * 3 + 1] * ts[1 * 3 + c] +
                       hn[r * 3 + 2] * ts[2 * 3 + c];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      out[r * 3 + c] = tdi[r * 3 + 0] * tmp[0 * 3 + c] +
                       tdi[r * 3 + 1] * tmp[1 * 3 + c] +
                       tdi[r * 3 + 2] * tmp[2 * 3 + c];
  return detail::h_from_mat3(out, "dlt_fit");
}

// Draws each parameter uniformly from [lo[i], hi[i]] in index order.
inline Homography sample_perturbation(const PerturbationRange& range,
                                      Rng& rng) {
  Homography g;
  for (int i = 0; i < 8; ++i) {
    if (range.lo[i] > range.hi[i])
      throw ConfigError("sample_perturbation: inverted range bound");
    g[i] = rng.uniform(range.lo[i], range.hi[i]);
  }
  return g;
}

// Accumulates interframe transforms into a camera path:
// path[0] = identity, path[t] = steps[0] * steps[1] * ... * steps[t-1].
inline CameraPath accumulate_path(const std::vector<Homography>& steps) {
  CameraPath path;
  path.reserve(steps.size() + 1);
  path.push_back(Homography::identity());
  for (std::size_t t = 0; t < steps.size(); ++t) {
    try {
      path.push_back(compose(path.back(), steps[t]));
    } catch (const NumericError& e) {
      throw NumericError("accumulate_path: step " + std::to_string(t) +
                         ": " + e.what());
    }
  }
  return path;
}

// Splits the 2x2 linear block into scale, rotation (polar factor), and
// singular values; translation is read off directly.
inline HomographyDecomposition decompose(const Homography& g) {
  const double a = g[0], b = g[1], c = g[3], d = g[4];
  const double det = a * d - b * c;
  if (std::abs(det) < detail::kDenEps)
    throw NumericError("decompose: singular linear block");
  HomographyDecomposition out;
  out.scale = std::sqrt(std::abs(det));
  out.rotation_angle = std::atan2(c - b, a + d);
  out.translation = {g[2], g[5]};
  const double s1 = a * a + b * b + c * c + d * d;
  const double s2 = std::sqrt(std::max(
      0.0, (a * a + b * b - c * c - d * d) * (a * a + b * b - c * c - d * d) +
               4.0 * (a * c + b * d) * (a * c + b * d)));
  out.sigma1 = std::sqrt(std::max(0.0, (s1 + s2) * 0.5));
  out.sigma2 = std::sqrt(std::max(0.0, (s1 - s2) * 0.5));
  return out;
}

}  // namespace stabkit

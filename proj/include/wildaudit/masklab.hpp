#pragma once

// RGBA mask processing: solidity via convex hulls (monotone chain, exact
// lattice rasterization), diagnostic image variants, and solidity summaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "wildaudit/common.hpp"

namespace wildaudit::masklab {

inline constexpr int kAlphaThreshold = 128;  // of 255

struct Mask {
  int width = 0, height = 0;
  std::vector<uint8_t> on;  // row-major, nonzero = foreground

  bool at(int x, int y) const {
    return on[static_cast<size_t>(y) * width + x] != 0;
  }
};

struct ImageRGBA {
  int width = 0, height = 0;
  std::vector<uint8_t> px;  // row-major RGBA8

  size_t offset(int x, int y) const {
    return (static_cast<size_t>(y) * width + x) * 4;
  }
};

struct MaskStats {
  std::string image_id;
  long long area = 0;
  long long hull_area = 0;  // lattice points inside or on the hull
  double solidity = 0.0;
  int width = 0, height = 0;
};

// ---------------------------------------------------------------------------
// Convex hull and lattice counting
// ---------------------------------------------------------------------------

namespace detail {

struct Pt {
  long long x, y;
  bool operator<(const Pt& o) const {
    return x != o.x ? x < o.x : y < o.y;
  }
  bool operator==(const Pt& o) const { return x == o.x && y == o.y; }
};

inline long long cross(const Pt& o, const Pt& a, const Pt& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Monotone chain; returns the hull in counter-clockwise order without
/// collinear points. Collinear input collapses to its two extremes; a single
/// point stays a single point.
inline std::vector<Pt> convex_hull(std::vector<Pt> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const size_t n = pts.size();
  if (n <= 2) return pts;
  std::vector<Pt> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {  // lower
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = n - 1, lower = k + 1; i-- > 0;) {  // upper
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

inline long long floor_div(long long a, long long b) {  // b > 0
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

inline long long ceil_div(long long a, long long b) {  // b > 0
  return a > 0 ? (a + b - 1) / b : -((-a) / b);
}

struct Frac {  // a / b with b > 0
  long long a, b;
};

inline bool frac_less(const Frac& f, const Frac& g) {
  return f.a * g.b < g.a * f.b;
}

/// Number of lattice points inside or on a convex hull (CCW, from
/// convex_hull above). Exact integer arithmetic throughout.
inline long long lattice_points_in_hull(const std::vector<Pt>& hull) {
  if (hull.empty()) return 0;
  if (hull.size() == 1) return 1;
  if (hull.size() == 2) {
    const long long dx = hull[1].x - hull[0].x, dy = hull[1].y - hull[0].y;
    return std::gcd(std::llabs(dx), std::llabs(dy)) + 1;
  }
  long long ymin = hull[0].y, ymax = hull[0].y;
  for (const auto& p : hull) {
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  long long total = 0;
  for (long long y = ymin; y <= ymax; ++y) {
    bool have = false;
    Frac lo{0, 1}, hi{0, 1};
    auto update = [&](const Frac& f) {
      if (!have) {
        lo = hi = f;
        have = true;
      } else {
        if (frac_less(f, lo)) lo = f;
        if (frac_less(hi, f)) hi = f;
      }
    };
    for (size_t i = 0; i < hull.size(); ++i) {
      const Pt& p = hull[i];
      const Pt& q = hull[(i + 1) % hull.size()];
      if (std::min(p.y, q.y) > y || std::max(p.y, q.y) < y) continue;
      if (p.y == q.y) {  // horizontal edge on this scanline
        update(Frac{p.x, 1});
        update(Frac{q.x, 1});
      } else {
        // x = p.x + (y - p.y)(q.x - p.x)/(q.y - p.y), normalized to den > 0
        long long num = p.x * (q.y - p.y) + (y - p.y) * (q.x - p.x);
        long long den = q.y - p.y;
        if (den < 0) {
          num = -num;
          den = -den;
        }
        update(Frac{num, den});
      }
    }
    if (!have) continue;
    const long long x_first = ceil_div(lo.a, lo.b);
    const long long x_last = floor_div(hi.a, hi.b);
    if (x_last >= x_first) total += x_last - x_first + 1;
  }
  return total;
}

}  // namespace detail

/// Solidity = foreground area / lattice count of the foreground's convex
/// hull. Pixel (x, y) contributes the point (x, y); hull counting is
/// boundary-inclusive, so convex digital shapes score exactly 1.
inline MaskStats solidity(const Mask& mask, const std::string& image_id = "") {
  std::vector<detail::Pt> pts;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y)) pts.push_back({x, y});
    }
  }
  if (pts.empty()) throw DataError("solidity: empty mask '" + image_id + "'");
  MaskStats st;
  st.image_id = image_id;
  st.width = mask.width;
  st.height = mask.height;
  st.area = static_cast<long long>(pts.size());
  st.hull_area = detail::lattice_points_in_hull(detail::convex_hull(pts));
  st.solidity = static_cast<double>(st.area) / static_cast<double>(st.hull_area);
  return st;
}

// ---------------------------------------------------------------------------
// Variant generation
// ---------------------------------------------------------------------------

inline Mask alpha_mask(const ImageRGBA& img, int threshold = kAlphaThreshold) {
  Mask m;
  m.width = img.width;
  m.height = img.height;
  m.on.resize(static_cast<size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      m.on[static_cast<size_t>(y) * img.width + x] =
          img.px[img.offset(x, y) + 3] > threshold ? 1 : 0;
    }
  }
  return m;
}

struct VariantSet {
  ImageRGBA foreground;     // RGB masked to the foreground, alpha preserved
  ImageRGBA silhouette;     // binary alpha rendered as white on black
  ImageRGBA bg_silhouette;  // background with the foreground blacked out
  ImageRGBA mirror;         // horizontal flip of the foreground cutout
};

inline ImageRGBA flip_horizontal(const ImageRGBA& img) {
  ImageRGBA out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const size_t src = img.offset(img.width - 1 - x, y);
      const size_t dst = out.offset(x, y);
      for (int c = 0; c < 4; ++c) out.px[dst + c] = img.px[src + c];
    }
  }
  return out;
}

/// Deterministic variants from one RGBA image; dimensions preserved.
inline VariantSet make_variants(const ImageRGBA& img,
                                int threshold = kAlphaThreshold) {
  if (img.px.size() != static_cast<size_t>(img.width) * img.height * 4)
    throw std::invalid_argument("make_variants: bad RGBA buffer");
  const Mask m = alpha_mask(img, threshold);
  if (std::find(m.on.begin(), m.on.end(), uint8_t{1}) == m.on.end())
    throw DataError("make_variants: empty foreground");

  VariantSet vs;
  vs.foreground = img;
  vs.silhouette = img;
  vs.bg_silhouette = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const size_t off = img.offset(x, y);
      const bool fg = m.at(x, y);
      for (int c = 0; c < 3; ++c) {
        vs.foreground.px[off + c] = fg ? img.px[off + c] : 0;
        vs.silhouette.px[off + c] = fg ? 255 : 0;
        vs.bg_silhouette.px[off + c] = fg ? 0 : img.px[off + c];
      }
      // foreground keeps the original alpha; the others are opaque
      vs.silhouette.px[off + 3] = 255;
      vs.bg_silhouette.px[off + 3] = 255;
    }
  }
  vs.mirror = flip_horizontal(vs.foreground);
  return vs;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

struct SoliditySummary {
  double mean = 0.0, median = 0.0, min = 0.0, max = 0.0;
  std::map<double, double> frac_below;  // threshold -> fraction (strict <)
};

inline SoliditySummary solidity_summary(
    const std::vector<MaskStats>& stats,
    const std::vector<double>& thresholds = {0.5}) {
  if (stats.empty())
    throw std::invalid_argument("solidity_summary: empty input");
  std::vector<double> s;
  s.reserve(stats.size());
  for (const auto& st : stats) s.push_back(st.solidity);
  std::sort(s.begin(), s.end());
  SoliditySummary out;
  out.min = s.front();
  out.max = s.back();
  out.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  const size_t n = s.size();
  out.median = (n % 2 == 1) ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
  for (double thr : thresholds) {
    const auto below = std::lower_bound(s.begin(), s.end(), thr) - s.begin();
    out.frac_below[thr] = static_cast<double>(below) / static_cast<double>(n);
  }
  return out;
}

}  // namespace wildaudit::masklab

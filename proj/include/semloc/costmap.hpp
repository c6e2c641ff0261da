#pragma once

// Binary semantic masks and the smooth [0,1] cost maps built from them.
// Cost maps peak at 1.0 on the landmark, so the alignment residual
// I(u) - 1 vanishes at perfect alignment.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "semloc/errors.hpp"
#include "semloc/geometry.hpp"
#include "semloc/hdmap.hpp"

namespace semloc {

struct SegMask {
  int width = 0;
  int height = 0;
  LandmarkClass cls = LandmarkClass::kLaneMarking;
  std::vector<std::uint8_t> data;  // row-major, 0 or 1

  SegMask() = default;
  SegMask(int w, int h, LandmarkClass c) : width(w), height(h), cls(c), data(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t occupied() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
  }

  void clear() { std::fill(data.begin(), data.end(), 0); }
};

struct CostMap {
  int width = 0;
  int height = 0;
  LandmarkClass cls = LandmarkClass::kLaneMarking;
  std::vector<double> data;

  CostMap() = default;
  CostMap(int w, int h, LandmarkClass c) : width(w), height(h), cls(c), data(static_cast<std::size_t>(w) * h, 0.0) {}

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// One cost map per landmark class, indexed by class_index().
using CameraCostMaps = std::array<CostMap, kNumClasses>;

inline constexpr int kUnreachable = std::numeric_limits<int>::max() / 4;

/// Exact chessboard (L-infinity) distance to the nearest occupied pixel via
/// the two-pass 8-neighbour chamfer sweep. Empty masks give kUnreachable.
inline std::vector<int> chessboard_distance(const SegMask& mask) {
  const int W = mask.width, H = mask.height;
  std::vector<int> d(static_cast<std::size_t>(W) * H);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = mask.data[i] ? 0 : kUnreachable;
  auto at = [&](int x, int y) -> int& { return d[static_cast<std::size_t>(y) * W + x]; };
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int v = at(x, y);
      if (v == 0) continue;
      if (x > 0) v = std::min(v, at(x - 1, y) + 1);
      if (y > 0) {
        v = std::min(v, at(x, y - 1) + 1);
        if (x > 0) v = std::min(v, at(x - 1, y - 1) + 1);
        if (x + 1 < W) v = std::min(v, at(x + 1, y - 1) + 1);
      }
      at(x, y) = v;
    }
  }
  for (int y = H - 1; y >= 0; --y) {
    for (int x = W - 1; x >= 0; --x) {
      int v = at(x, y);
      if (v == 0) continue;
      if (x + 1 < W) v = std::min(v, at(x + 1, y) + 1);
      if (y + 1 < H) {
        v = std::min(v, at(x, y + 1) + 1);
        if (x + 1 < W) v = std::min(v, at(x + 1, y + 1) + 1);
        if (x > 0) v = std::min(v, at(x - 1, y + 1) + 1);
      }
      at(x, y) = v;
    }
  }
  return d;
}

/// Keeps pixels whose chessboard distance to the nearest empty pixel exceeds
/// `radius` (iterated 3x3 erosion). The image border does not erode.
inline SegMask erode(const SegMask& mask, int radius) {
  if (radius <= 0) return mask;
  SegMask inverse(mask.width, mask.height, mask.cls);
  for (std::size_t i = 0; i < mask.data.size(); ++i) inverse.data[i] = mask.data[i] ? 0 : 1;
  const auto d = chessboard_distance(inverse);
  SegMask out(mask.width, mask.height, mask.cls);
  for (std::size_t i = 0; i < d.size(); ++i) out.data[i] = d[i] > radius ? 1 : 0;
  return out;
}

/// Value at chessboard distance d from the mask: 1 inside the plateau, then a
/// linear ramp down to 0 over `ramp_width` pixels.
inline double morphology_ramp(int d, int plateau_dilate, int ramp_width) {
  if (d >= kUnreachable) return 0.0;
  const int beyond = std::max(0, d - plateau_dilate);
  return std::max(0.0, 1.0 - static_cast<double>(beyond) / static_cast<double>(ramp_width));
}

inline CostMap build_costmap_morphology(const SegMask& mask, int plateau_dilate, int ramp_width) {
  if (ramp_width < 1) throw Error(ErrorKind::kValidation, "ramp_width must be >= 1");
  if (plateau_dilate < 0) throw Error(ErrorKind::kValidation, "plateau_dilate must be >= 0");
  CostMap out(mask.width, mask.height, mask.cls);
  const auto d = chessboard_distance(mask);
  for (std::size_t i = 0; i < d.size(); ++i) out.data[i] = morphology_ramp(d[i], plateau_dilate, ramp_width);
  return out;
}

/// Pixels with a nonzero 4-neighbour discrete Laplacian response. Out-of-image
/// neighbours replicate the border pixel so the image frame is not an edge.
inline SegMask laplacian_edges(const SegMask& mask) {
  const int W = mask.width, H = mask.height;
  SegMask edges(W, H, mask.cls);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int c = mask.at(x, y) ? 1 : 0;
      const int l = mask.at(std::max(x - 1, 0), y) ? 1 : 0;
      const int r = mask.at(std::min(x + 1, W - 1), y) ? 1 : 0;
      const int u = mask.at(x, std::max(y - 1, 0)) ? 1 : 0;
      const int dn = mask.at(x, std::min(y + 1, H - 1)) ? 1 : 0;
      const int response = 4 * c - l - r - u - dn;
      edges.at(x, y) = response != 0 ? 1 : 0;
    }
  }
  return edges;
}

inline CostMap build_costmap_signboard(const SegMask& mask, int plateau_dilate, int ramp_width) {
  return build_costmap_morphology(laplacian_edges(mask), plateau_dilate, ramp_width);
}

namespace detail {

// 1D squared distance transform of a sampled function (lower envelope of
// parabolas), linear time.
inline void edt_1d(const double* f, double* out, int n, std::vector<int>& v, std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    auto intersect = [&](int p) {
      return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
    };
    // z[0] is -inf, so the loop stops at k = 0 at the latest
    double s = intersect(v[static_cast<std::size_t>(k)]);
    while (s <= z[static_cast<std::size_t>(k)]) {
      --k;
      s = intersect(v[static_cast<std::size_t>(k)]);
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) out[q] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
    const int p = v[static_cast<std::size_t>(j)];
    out[q] = static_cast<double>(q - p) * (q - p) + f[p];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance to the nearest occupied pixel, computed
/// separably (columns, then rows). Empty masks give +inf.
inline std::vector<double> squared_euclidean_distance(const SegMask& mask) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const int W = mask.width, H = mask.height;
  std::vector<double> g(static_cast<std::size_t>(W) * H);
  std::vector<double> col(static_cast<std::size_t>(H)), col_out(static_cast<std::size_t>(H));
  std::vector<int> v;
  std::vector<double> z;
  for (int x = 0; x < W; ++x) {
    for (int y = 0; y < H; ++y) col[static_cast<std::size_t>(y)] = mask.at(x, y) ? 0.0 : kInf;
    detail::edt_1d(col.data(), col_out.data(), H, v, z);
    for (int y = 0; y < H; ++y) g[static_cast<std::size_t>(y) * W + x] = col_out[static_cast<std::size_t>(y)];
  }
  std::vector<double> row_out(static_cast<std::size_t>(W));
  for (int y = 0; y < H; ++y) {
    double* row = g.data() + static_cast<std::size_t>(y) * W;
    detail::edt_1d(row, row_out.data(), W, v, z);
    std::copy(row_out.begin(), row_out.end(), row);
  }
  return g;
}

inline CostMap build_costmap_distance_transform(const SegMask& mask, double truncation) {
  if (!(truncation > 0.0)) throw Error(ErrorKind::kValidation, "truncation must be positive");
  CostMap out(mask.width, mask.height, mask.cls);
  const auto d2 = squared_euclidean_distance(mask);
  for (std::size_t i = 0; i < d2.size(); ++i) {
    out.data[i] = std::isinf(d2[i]) ? 0.0 : std::max(0.0, 1.0 - std::sqrt(d2[i]) / truncation);
  }
  return out;
}

enum class CostMapMethod { kMorphology, kDistanceTransform };

struct CostMapParams {
  CostMapMethod method = CostMapMethod::kMorphology;
  int plateau_dilate = 2;
  int ramp_width = 20;
  double truncation = 20.0;
  int erode_radius = 0;  // optional denoising before the ramp (lanes and poles)
};

/// Builds the cost map for one class mask. Signboard masks go through edge
/// extraction first when the morphology method is selected.
inline CostMap build_costmap(const SegMask& mask, const CostMapParams& params) {
  if (params.erode_radius > 0 && mask.cls != LandmarkClass::kSignboard) {
    SegMask cleaned = erode(mask, params.erode_radius);
    return build_costmap(cleaned, {params.method, params.plateau_dilate, params.ramp_width, params.truncation, 0});
  }
  if (params.method == CostMapMethod::kDistanceTransform) {
    return build_costmap_distance_transform(mask, params.truncation);
  }
  if (mask.cls == LandmarkClass::kSignboard) {
    return build_costmap_signboard(mask, params.plateau_dilate, params.ramp_width);
  }
  return build_costmap_morphology(mask, params.plateau_dilate, params.ramp_width);
}

struct CostSample {
  double value = 0.0;
  Vec2 gradient = Vec2::Zero();
};

/// Bilinear interpolation with the analytic gradient of the bilinear patch.
/// Returns nullopt outside [0, W-1] x [0, H-1].
inline std::optional<CostSample> try_sample_bilinear(const CostMap& map, const Vec2& u) {
  const double x = u.x(), y = u.y();
  if (!(x >= 0.0 && y >= 0.0 && x <= map.width - 1.0 && y <= map.height - 1.0)) return std::nullopt;
  const int x0 = std::min(static_cast<int>(x), std::max(map.width - 2, 0));
  const int y0 = std::min(static_cast<int>(y), std::max(map.height - 2, 0));
  const int x1 = std::min(x0 + 1, map.width - 1);
  const int y1 = std::min(y0 + 1, map.height - 1);
  const double ax = x - x0, ay = y - y0;
  const double v00 = map.at(x0, y0), v10 = map.at(x1, y0);
  const double v01 = map.at(x0, y1), v11 = map.at(x1, y1);
  CostSample s;
  const double top = v00 + ax * (v10 - v00);
  const double bottom = v01 + ax * (v11 - v01);
  s.value = top + ay * (bottom - top);
  s.gradient.x() = x1 != x0 ? (1.0 - ay) * (v10 - v00) + ay * (v11 - v01) : 0.0;
  s.gradient.y() = y1 != y0 ? bottom - top : 0.0;
  return s;
}

inline CostSample sample_bilinear(const CostMap& map, const Vec2& u) {
  auto s = try_sample_bilinear(map, u);
  if (!s) throw Error(ErrorKind::kOutOfBounds, "sample position outside cost map");
  return *s;
}

}  // namespace semloc

#pragma once

// Coarse-to-fine initialization: a pose from two GPS fixes, refined by an
// exhaustive grid search over the map-alignment cost.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <thread>
#include <tuple>
#include <vector>

#include "semloc/costmap.hpp"
#include "semloc/errors.hpp"
#include "semloc/geometry.hpp"
#include "semloc/hdmap.hpp"

namespace semloc {

/// Mean alignment cost of a pose. `mean_cost` averages 1 - I(u) over every
/// (point, camera) pair that projects inside the image.
struct CostEvaluation {
  Pose pose;
  double mean_cost = 1.0;
  double visible_fraction = 0.0;
  std::size_t n_points = 0;  // visible (point, camera) observations
};

namespace detail {

struct CostSums {
  double residual_sum = 0.0;
  std::size_t observations = 0;
  std::size_t visible_points = 0;
};

inline CostSums accumulate_cost(const Pose& pose, std::span<const CameraModel> cameras,
                                std::span<const CameraCostMaps> costmaps, std::span<const SampledPoint> points,
                                double z_min) {
  CostSums sums;
  std::vector<Pose> T_cw;
  T_cw.reserve(cameras.size());
  for (const auto& cam : cameras) T_cw.push_back((pose * cam.extrinsic_bc).inverse());
  for (const auto& pt : points) {
    bool seen = false;
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      const Vec3 p_c = T_cw[c] * pt.position;
      const auto u = try_project(cameras[c], p_c, z_min);
      if (!u) continue;
      const auto s = try_sample_bilinear(costmaps[c][class_index(pt.cls)], *u);
      if (!s) continue;
      sums.residual_sum += 1.0 - s->value;
      ++sums.observations;
      seen = true;
    }
    if (seen) ++sums.visible_points;
  }
  return sums;
}

}  // namespace detail

inline CostEvaluation evaluate_pose_cost(const Pose& pose, std::span<const CameraModel> cameras,
                                         std::span<const CameraCostMaps> costmaps,
                                         std::span<const SampledPoint> points, double z_min = kDefaultZMin) {
  if (points.empty()) throw Error(ErrorKind::kNoVisiblePoints, "no map points to evaluate");
  const auto sums = detail::accumulate_cost(pose, cameras, costmaps, points, z_min);
  if (sums.observations == 0) throw Error(ErrorKind::kNoVisiblePoints, "no map point projects into any image");
  CostEvaluation e;
  e.pose = pose;
  e.mean_cost = sums.residual_sum / static_cast<double>(sums.observations);
  e.visible_fraction = static_cast<double>(sums.visible_points) / static_cast<double>(points.size());
  e.n_points = sums.observations;
  return e;
}

struct GpsFix {
  Vec2 position = Vec2::Zero();
  bool valid = false;
};

/// Planar position from the second fix, heading from the fix pair, height from
/// the nearest lane-marking sample, roll = pitch = 0.
inline Pose coarse_pose_from_gps(const Vec2& fix_a, const Vec2& fix_b, const HdMap& map, double min_separation,
                                 double z_lookup_radius = 30.0) {
  const Vec2 d = fix_b - fix_a;
  if (d.norm() < min_separation) {
    throw Error(ErrorKind::kInsufficientSeparation,
                "GPS fixes " + std::to_string(d.norm()) + " m apart, need " + std::to_string(min_separation));
  }
  double best = std::numeric_limits<double>::infinity();
  double z = 0.0;
  const Vec3 center(fix_b.x(), fix_b.y(), 0.0);
  for (const Landmark* lm : map.query_radius(center, z_lookup_radius)) {
    if (lm->cls != LandmarkClass::kLaneMarking) continue;
    for (const auto& s : sample_polyline(*lm, 0.5)) {
      const double dist = (s.position.head<2>() - fix_b).norm();
      if (dist < best) {
        best = dist;
        z = s.position.z();
      }
    }
  }
  if (!std::isfinite(best)) {
    throw Error(ErrorKind::kEmptyMapNeighborhood, "no lane marking within " + std::to_string(z_lookup_radius) + " m");
  }
  EulerPose e;
  e.yaw = std::atan2(d.y(), d.x());
  e.translation = Vec3(fix_b.x(), fix_b.y(), z);
  return e.to_pose();
}

enum class GridAxisKind { kLateral, kLongitudinal, kYaw };

struct GridAxis {
  GridAxisKind kind = GridAxisKind::kLateral;
  double range = 0.0;  // +/- m or rad
  double step = 1.0;

  /// Offsets i * step for |i * step| <= range; always contains 0.
  std::vector<double> offsets() const {
    const auto m = static_cast<int>(std::floor(range / step + 1e-9));
    std::vector<double> out;
    for (int i = -m; i <= m; ++i) out.push_back(i * step);
    return out;
  }
};

struct GridSpec {
  std::vector<GridAxis> axes;

  static GridSpec defaults() {
    return {{{GridAxisKind::kLateral, 10.0, 0.2},
             {GridAxisKind::kLongitudinal, 5.0, 0.5},
             {GridAxisKind::kYaw, deg2rad(6.0), deg2rad(1.0)}}};
  }

  void validate() const {
    if (axes.empty()) throw Error(ErrorKind::kValidation, "grid has no axes");
    for (const auto& a : axes) {
      if (!(a.step > 0.0) || a.step > a.range + 1e-12) {
        throw Error(ErrorKind::kValidation, "grid axis needs 0 < step <= range");
      }
    }
  }
};

struct GridCandidate {
  double lateral = 0.0;
  double longitudinal = 0.0;
  double yaw = 0.0;
  double displacement = 0.0;  // sum of squared offsets in grid steps
  std::size_t index = 0;
};

/// Cartesian product of the axis offsets in lexicographic axis order.
inline std::vector<GridCandidate> enumerate_grid(const GridSpec& grid) {
  grid.validate();
  std::vector<GridCandidate> out{GridCandidate{}};
  for (const auto& axis : grid.axes) {
    std::vector<GridCandidate> next;
    for (const auto& base : out) {
      for (double off : axis.offsets()) {
        GridCandidate c = base;
        switch (axis.kind) {
          case GridAxisKind::kLateral: c.lateral += off; break;
          case GridAxisKind::kLongitudinal: c.longitudinal += off; break;
          case GridAxisKind::kYaw: c.yaw += off; break;
        }
        const double n = off / axis.step;
        c.displacement += n * n;
        next.push_back(c);
      }
    }
    out = std::move(next);
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].index = i;
  return out;
}

/// Candidate pose: offsets applied in the vehicle frame of the coarse pose
/// (x longitudinal, y lateral), yaw offset about the vehicle z axis.
inline Pose apply_candidate(const Pose& coarse, const GridCandidate& c) {
  Pose p;
  p.rotation = coarse.rotation * rot_z(c.yaw);
  p.translation = coarse.translation + coarse.rotation * Vec3(c.longitudinal, c.lateral, 0.0);
  return p;
}

struct InitializerConfig {
  double min_separation = 2.0;   // m between the two GPS fixes
  double z_lookup_radius = 30.0;
  double min_visible = 0.3;      // candidates seeing fewer points are rejected
  double z_min = kDefaultZMin;
  GridSpec grid = GridSpec::defaults();
  unsigned threads = 1;          // candidate evaluation workers
};

struct GridSearchResult {
  CostEvaluation best;
  GridCandidate offset;
  std::size_t evaluated = 0;
  std::size_t rejected = 0;
};

namespace detail {

struct ScoredCandidate {
  double cost = std::numeric_limits<double>::infinity();
  double displacement = 0.0;
  std::size_t index = std::numeric_limits<std::size_t>::max();
  CostEvaluation eval;
  bool valid = false;

  // Strict total order: cost, then distance from the coarse pose, then index.
  bool better_than(const ScoredCandidate& o) const {
    if (valid != o.valid) return valid;
    return std::tie(cost, displacement, index) < std::tie(o.cost, o.displacement, o.index);
  }
};

}  // namespace detail

/// Exhaustive search over the grid around `coarse`. Candidates are independent,
/// so they may be split across workers; the reduction order is fixed and the
/// comparison is a total order, so the result does not depend on `threads`.
inline GridSearchResult grid_search_refine(const Pose& coarse, std::span<const CameraModel> cameras,
                                           std::span<const CameraCostMaps> costmaps,
                                           std::span<const SampledPoint> points, const InitializerConfig& cfg) {
  if (points.empty()) throw Error(ErrorKind::kNoVisiblePoints, "no map points to evaluate");
  const auto candidates = enumerate_grid(cfg.grid);

  auto score_range = [&](std::size_t begin, std::size_t end, detail::ScoredCandidate& best, std::size_t& rejected) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& c = candidates[i];
      const Pose pose = apply_candidate(coarse, c);
      const auto sums = detail::accumulate_cost(pose, cameras, costmaps, points, cfg.z_min);
      const double visible = static_cast<double>(sums.visible_points) / static_cast<double>(points.size());
      if (sums.observations == 0 || visible < cfg.min_visible) {
        ++rejected;
        continue;
      }
      detail::ScoredCandidate sc;
      sc.valid = true;
      sc.cost = sums.residual_sum / static_cast<double>(sums.observations);
      sc.displacement = c.displacement;
      sc.index = c.index;
      if (sc.better_than(best)) {
        sc.eval = CostEvaluation{pose, sc.cost, visible, sums.observations};
        best = sc;
      }
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(candidates.size())));
  std::vector<detail::ScoredCandidate> bests(workers);
  std::vector<std::size_t> rejected(workers, 0);
  const std::size_t chunk = (candidates.size() + workers - 1) / workers;
  if (workers == 1) {
    score_range(0, candidates.size(), bests[0], rejected[0]);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t b = std::min(candidates.size(), w * chunk);
      const std::size_t e = std::min(candidates.size(), b + chunk);
      pool.emplace_back([&, w, b, e] { score_range(b, e, bests[w], rejected[w]); });
    }
  }
  detail::ScoredCandidate best;
  std::size_t total_rejected = 0;
  for (unsigned w = 0; w < workers; ++w) {
    if (bests[w].better_than(best)) best = bests[w];
    total_rejected += rejected[w];
  }
  if (!best.valid) throw Error(ErrorKind::kAllCandidatesInvalid, "no grid candidate sees enough map points");
  GridSearchResult r;
  r.best = best.eval;
  r.offset = candidates[best.index];
  r.evaluated = candidates.size();
  r.rejected = total_rejected;
  return r;
}

}  // namespace semloc

#pragma once

// Per-frame pose refinement against semantic cost maps: odometry prediction,
// longitudinal observability checks, two-pass robust Levenberg-Marquardt
// alignment with DoF scheduling, roll fine-tuning and confidence scoring.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "semloc/costmap.hpp"
#include "semloc/errors.hpp"
#include "semloc/geometry.hpp"
#include "semloc/hdmap.hpp"
#include "semloc/initializer.hpp"

namespace semloc {

enum class LongitudinalConstraint { kConstrained, kUnconstrained };
enum class DofMode { kFull6, kDecoupled };

inline const char* to_string(DofMode m) { return m == DofMode::kFull6 ? "full6" : "decoupled"; }

/// Axes of the Euler/translation parameterization used in decoupled mode.
/// Translation axes live in the heading frame of the predicted pose, so tx is
/// the longitudinal and ty the lateral direction.
enum class PoseAxis { kRoll, kPitch, kYaw, kTx, kTy, kTz };

struct DofSchedule {
  DofMode mode = DofMode::kFull6;
  std::vector<std::vector<PoseAxis>> stages;  // empty for Full6
};

inline DofSchedule select_dof_mode(LongitudinalConstraint constraint) {
  if (constraint == LongitudinalConstraint::kConstrained) return {DofMode::kFull6, {}};
  return {DofMode::kDecoupled,
          {{PoseAxis::kPitch, PoseAxis::kYaw, PoseAxis::kTy}, {PoseAxis::kPitch, PoseAxis::kTz}}};
}

struct TrackerConfig {
  double huber_delta = 0.3;
  double outlier_cutoff = 0.7;
  int max_lm_iterations = 30;
  double lm_initial_lambda = 1e-3;
  double z_min = kDefaultZMin;

  // longitudinal observability
  std::size_t min_vertical_samples = 1;
  double parallel_angle_threshold = deg2rad(2.0);
  double curvature_threshold = 1.0 / 500.0;

  double roll_range = deg2rad(2.0);
  double roll_step = deg2rad(0.5);

  double confidence_success = 0.8;

  void validate() const {
    if (!(huber_delta > 0.0 && outlier_cutoff > 0.0 && max_lm_iterations > 0 && lm_initial_lambda > 0.0 &&
          parallel_angle_threshold > 0.0 && curvature_threshold > 0.0 && roll_step > 0.0 &&
          confidence_success > 0.0)) {
      throw Error(ErrorKind::kConfig, "tracker thresholds must be positive");
    }
    if (roll_step > roll_range + 1e-12) throw Error(ErrorKind::kConfig, "roll step exceeds roll range");
  }
};

inline Pose predict_pose(const Pose& prev, const Pose& odom) { return prev * odom; }

inline constexpr double kMinChunkOverlap = 1.0;  // metres

/// Longitudinal position is unobservable when the local map holds only
/// straight lane markings that are parallel to each other.

inline LongitudinalConstraint detect_longitudinal_constraint(std::span<const SampledPoint> points, const Pose& pose,
                                                             const TrackerConfig& cfg) {
  std::size_t vertical = 0;
  std::map<std::int64_t, std::vector<Vec2>> lanes;
  for (const auto& p : points) {
    if (p.cls == LandmarkClass::kLaneMarking) {
      lanes[p.source_id].push_back(p.position.head<2>());
    } else {
      ++vertical;
    }
  }
  if (vertical >= cfg.min_vertical_samples) return LongitudinalConstraint::kConstrained;

  const Vec2 forward = pose.rotation.col(0).head<2>().normalized();
  // Chunks are only compared where they run side by side: a gently curving
  // road changes heading between chunks far apart along it.
  struct Chunk {
    Vec2 direction;
    double lo, hi;  // extent along the forward axis
  };
  std::vector<Chunk> chunks;
  for (const auto& [id, pts] : lanes) {
    if (pts.size() < 2) continue;
    Vec2 d = pts.back() - pts.front();
    if (d.norm() < 1e-9) continue;
    d.normalize();
    if (d.dot(forward) < 0.0) d = -d;
    const double a = pts.front().dot(forward), b = pts.back().dot(forward);
    chunks.push_back({d, std::min(a, b), std::max(a, b)});

    if (pts.size() >= 3) {
      const Vec2 first = pts[1] - pts[0];
      const Vec2 last = pts[pts.size() - 1] - pts[pts.size() - 2];
      const double turn = std::abs(std::atan2(first.x() * last.y() - first.y() * last.x(), first.dot(last)));
      const double span = (0.5 * (pts[pts.size() - 1] + pts[pts.size() - 2]) - 0.5 * (pts[1] + pts[0])).norm();
      if (span > 1e-9 && turn / span > cfg.curvature_threshold) return LongitudinalConstraint::kConstrained;
    }
  }
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    for (std::size_t j = i + 1; j < chunks.size(); ++j) {
      if (std::min(chunks[i].hi, chunks[j].hi) - std::max(chunks[i].lo, chunks[j].lo) < kMinChunkOverlap) continue;
      const double c = std::clamp(chunks[i].direction.dot(chunks[j].direction), -1.0, 1.0);
      if (std::acos(c) > cfg.parallel_angle_threshold) return LongitudinalConstraint::kConstrained;
    }
  }
  return LongitudinalConstraint::kUnconstrained;
}

/// Moves the pose along its planar forward axis by the forward component of
/// (gps - position). Lateral position and attitude are untouched.
inline Pose longitudinal_correction(const Pose& pose, const Vec2& gps, bool valid) {
  if (!valid) return pose;
  const Vec2 forward = pose.rotation.col(0).head<2>().normalized();
  const double along = (gps - pose.translation.head<2>()).dot(forward);
  Pose out = pose;
  out.translation.head<2>() += along * forward;
  return out;
}

/// A (map point, camera) pair entering the alignment objective.
struct ObservationRef {
  std::size_t point = 0;
  std::size_t camera = 0;
};

struct TrackResult {
  Pose pose;
  double confidence = 0.0;
  std::size_t inlier_count = 0;
  bool converged = false;
  bool degenerate = false;
  DofMode dof_mode = DofMode::kFull6;
  int iterations = 0;
  double initial_cost = 0.0;  // unweighted mean squared residual over the first active set
  double final_cost = 0.0;
  bool monotone = true;       // every accepted LM step lowered its objective
  std::vector<ObservationRef> inliers;

  // decoupled-mode state at the end of the optimization
  EulerPose euler;
  Vec3 heading_translation = Vec3::Zero();
  double heading = 0.0;
};

/// Mean cost-map value at the current projections of the inlier
/// observations; observations leaving the image count as zero.
inline double compute_confidence(const Pose& pose, std::span<const ObservationRef> inliers,
                                 std::span<const CameraModel> cameras, std::span<const CameraCostMaps> costmaps,
                                 std::span<const SampledPoint> points, double z_min = kDefaultZMin) {
  if (inliers.empty()) return 0.0;
  std::vector<Pose> T_cw;
  for (const auto& cam : cameras) T_cw.push_back((pose * cam.extrinsic_bc).inverse());
  double sum = 0.0;
  for (const auto& o : inliers) {
    const auto& pt = points[o.point];
    const auto u = try_project(cameras[o.camera], T_cw[o.camera] * pt.position, z_min);
    if (!u) continue;
    if (const auto s = try_sample_bilinear(costmaps[o.camera][class_index(pt.cls)], *u)) sum += s->value;
  }
  return sum / static_cast<double>(inliers.size());
}

namespace detail {

enum class Kernel { kHuber, kNone };

inline double kernel_cost(Kernel k, double r, double delta) {
  const double a = std::abs(r);
  if (k == Kernel::kHuber && a > delta) return delta * (a - 0.5 * delta);
  return 0.5 * r * r;
}

inline double kernel_weight(Kernel k, double r, double delta) {
  const double a = std::abs(r);
  if (k == Kernel::kHuber && a > delta) return delta / a;
  return 1.0;
}

struct AlignInputs {
  std::span<const CameraModel> cameras;
  std::span<const CameraCostMaps> costmaps;
  std::span<const SampledPoint> points;
  double z_min = kDefaultZMin;
};

// Residual r = I(u) - 1 and, optionally, its camera-frame gradient
// dr/dp_c. Observations outside the image get r = -1 and no gradient.
struct ObsEval {
  double r = -1.0;
  bool visible = false;
  Vec3 p_c = Vec3::Zero();
  Eigen::RowVector3d dr_dpc = Eigen::RowVector3d::Zero();
};

inline ObsEval eval_obs(const AlignInputs& in, const std::vector<Pose>& T_cw, const ObservationRef& o,
                        bool with_gradient) {
  ObsEval e;
  const auto& pt = in.points[o.point];
  const auto& cam = in.cameras[o.camera];
  e.p_c = T_cw[o.camera] * pt.position;
  const auto u = try_project(cam, e.p_c, in.z_min);
  if (!u) return e;
  const auto s = try_sample_bilinear(in.costmaps[o.camera][class_index(pt.cls)], *u);
  if (!s) return e;
  e.visible = true;
  e.r = s->value - 1.0;
  if (with_gradient) e.dr_dpc = s->gradient.transpose() * jacobian_projection(cam, e.p_c, in.z_min);
  return e;
}

inline std::vector<Pose> camera_from_world(const Pose& pose, std::span<const CameraModel> cameras) {
  std::vector<Pose> out;
  out.reserve(cameras.size());
  for (const auto& cam : cameras) out.push_back((pose * cam.extrinsic_bc).inverse());
  return out;
}

// Right-perturbation SE(3) parameterization.
struct Full6Params {
  Pose pose;

  int size() const { return 6; }
  Pose current() const { return pose; }

  Eigen::Matrix<double, 3, Eigen::Dynamic> dpc(const AlignInputs& in, const ObservationRef& o,
                                               const Vec3& p_c) const {
    return jacobian_point_se3(p_c, in.cameras[o.camera].extrinsic_bc.inverse());
  }

  Full6Params retract(const Eigen::VectorXd& d) const {
    Vec6 xi = d;
    return {pose * se3_exp(xi)};
  }
};

// Euler angles plus heading-frame translation, optimizing a subset of axes.
struct DecoupledParams {
  EulerPose euler;
  Vec3 t_heading = Vec3::Zero();
  double heading = 0.0;
  std::vector<PoseAxis> axes;

  int size() const { return static_cast<int>(axes.size()); }

  Pose current() const { return {euler.rotation(), rot_z(heading) * t_heading}; }

  Eigen::Matrix<double, 3, Eigen::Dynamic> dpc(const AlignInputs& in, const ObservationRef& o,
                                               const Vec3& /*p_c*/) const {
    const Pose& ext = in.cameras[o.camera].extrinsic_bc;
    Eigen::Matrix<double, 3, Eigen::Dynamic> J(3, size());
    EulerPose e = euler;
    e.translation = rot_z(heading) * t_heading;
    const Vec3& p_w = in.points[o.point].position;
    Mat3 Jt;
    bool have_jt = false;
    for (int i = 0; i < size(); ++i) {
      switch (axes[static_cast<std::size_t>(i)]) {
        case PoseAxis::kRoll: J.col(i) = jacobian_point_euler(e, ext, p_w, EulerAxis::kX); break;
        case PoseAxis::kPitch: J.col(i) = jacobian_point_euler(e, ext, p_w, EulerAxis::kY); break;
        case PoseAxis::kYaw: J.col(i) = jacobian_point_euler(e, ext, p_w, EulerAxis::kZ); break;
        case PoseAxis::kTx:
        case PoseAxis::kTy:
        case PoseAxis::kTz: {
          if (!have_jt) {
            Jt = jacobian_point_translation(e.to_pose(), ext) * rot_z(heading);
            have_jt = true;
          }
          const int k = axes[static_cast<std::size_t>(i)] == PoseAxis::kTx   ? 0
                        : axes[static_cast<std::size_t>(i)] == PoseAxis::kTy ? 1
                                                                             : 2;
          J.col(i) = Jt.col(k);
          break;
        }
      }
    }
    return J;
  }

  DecoupledParams retract(const Eigen::VectorXd& d) const {
    DecoupledParams out = *this;
    for (int i = 0; i < size(); ++i) {
      const double v = d[i];
      switch (axes[static_cast<std::size_t>(i)]) {
        case PoseAxis::kRoll: out.euler.roll += v; break;
        case PoseAxis::kPitch: out.euler.pitch += v; break;
        case PoseAxis::kYaw: out.euler.yaw += v; break;
        case PoseAxis::kTx: out.t_heading.x() += v; break;
        case PoseAxis::kTy: out.t_heading.y() += v; break;
        case PoseAxis::kTz: out.t_heading.z() += v; break;
      }
    }
    return out;
  }
};

template <typename Params>
double objective(const AlignInputs& in, const Params& params, std::span<const ObservationRef> active, Kernel kernel,
                 double delta) {
  const auto T_cw = camera_from_world(params.current(), in.cameras);
  double cost = 0.0;
  for (const auto& o : active) cost += kernel_cost(kernel, eval_obs(in, T_cw, o, false).r, delta);
  return cost;
}

struct LmStats {
  int iterations = 0;
  bool degenerate = false;
  bool monotone = true;
};

template <typename Params>
LmStats run_lm(const AlignInputs& in, Params& params, std::span<const ObservationRef> active, Kernel kernel,
               const TrackerConfig& cfg) {
  LmStats stats;
  const int n = params.size();
  if (n == 0 || active.empty()) return stats;

  // observations off the zero-cost floor of their map; without any the
  // pose carries no information
  std::size_t informative = 0;
  auto linearize = [&](const Params& p, Eigen::MatrixXd& H, Eigen::VectorXd& g) {
    H.setZero(n, n);
    g.setZero(n);
    informative = 0;
    const auto T_cw = camera_from_world(p.current(), in.cameras);
    double cost = 0.0;
    for (const auto& o : active) {
      const ObsEval e = eval_obs(in, T_cw, o, true);
      cost += kernel_cost(kernel, e.r, cfg.huber_delta);
      if (e.visible && e.r > -1.0) ++informative;
      if (!e.visible || e.dr_dpc.isZero(0.0)) continue;
      const Eigen::RowVectorXd J = e.dr_dpc * p.dpc(in, o, e.p_c);
      const double w = kernel_weight(kernel, e.r, cfg.huber_delta);
      H.noalias() += w * J.transpose() * J;
      g.noalias() += w * J.transpose() * e.r;
    }
    return cost;
  };

  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double cost = linearize(params, H, g);
  double lambda = cfg.lm_initial_lambda;
  while (stats.iterations < cfg.max_lm_iterations) {
    const double hmax = H.diagonal().maxCoeff();
    if (!(hmax > 0.0)) {
      // no gradient: a flat optimum when some observation sits on a
      // nonzero cost, degenerate otherwise
      stats.degenerate = informative == 0;
      break;
    }
    ++stats.iterations;
    Eigen::MatrixXd A = H;
    A.diagonal() += lambda * (H.diagonal().array() + 1e-9 * hmax).matrix();
    const Eigen::VectorXd step = A.ldlt().solve(-g);
    if (!step.allFinite()) {
      stats.degenerate = true;
      break;
    }
    Params candidate = params.retract(step);
    const double new_cost = objective(in, candidate, active, kernel, cfg.huber_delta);
    if (new_cost < cost) {
      const double rel = (cost - new_cost) / std::max(cost, 1e-300);
      params = candidate;
      lambda = std::max(lambda * 0.1, 1e-12);
      const double previous = cost;
      cost = linearize(params, H, g);
      if (cost > previous) stats.monotone = false;
      if (step.norm() < 1e-10 || rel < 1e-10) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e8) break;
    }
  }
  return stats;
}

inline double mean_squared_residual(const AlignInputs& in, const Pose& pose, std::span<const ObservationRef> active) {
  if (active.empty()) return 0.0;
  const auto T_cw = camera_from_world(pose, in.cameras);
  double s = 0.0;
  for (const auto& o : active) {
    const double r = eval_obs(in, T_cw, o, false).r;
    s += r * r;
  }
  return s / static_cast<double>(active.size());
}

}  // namespace detail

/// Two-pass alignment: a Huber-weighted pass over every observation visible
/// at the prediction, then an unweighted pass over the observations whose
/// first-pass residual is within `outlier_cutoff`.
inline TrackResult align_photometric(const Pose& pred, std::span<const SampledPoint> points,
                                     std::span<const CameraModel> cameras, std::span<const CameraCostMaps> costmaps,
                                     const TrackerConfig& cfg, const DofSchedule& schedule) {
  if (points.empty()) throw Error(ErrorKind::kNoVisiblePoints, "no map points to align");
  const detail::AlignInputs in{cameras, costmaps, points, cfg.z_min};

  std::vector<ObservationRef> active;
  {
    const auto T_cw = detail::camera_from_world(pred, cameras);
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (std::size_t c = 0; c < cameras.size(); ++c) {
        if (detail::eval_obs(in, T_cw, {i, c}, false).visible) active.push_back({i, c});
      }
    }
  }
  if (active.empty()) throw Error(ErrorKind::kNoVisiblePoints, "no map point projects into any image");

  TrackResult result;
  result.dof_mode = schedule.mode;
  result.initial_cost = detail::mean_squared_residual(in, pred, active);

  detail::Full6Params full{pred};
  detail::DecoupledParams dec;
  dec.euler = EulerPose::from_pose(pred);
  dec.heading = dec.euler.yaw;
  dec.t_heading = rot_z(dec.heading).transpose() * pred.translation;

  auto run_pass = [&](std::span<const ObservationRef> obs, detail::Kernel kernel) {
    if (schedule.mode == DofMode::kFull6) {
      const auto st = detail::run_lm(in, full, obs, kernel, cfg);
      result.iterations += st.iterations;
      result.degenerate = result.degenerate || st.degenerate;
      result.monotone = result.monotone && st.monotone;
      return;
    }
    for (const auto& stage : schedule.stages) {
      dec.axes = stage;
      const auto st = detail::run_lm(in, dec, obs, kernel, cfg);
      result.iterations += st.iterations;
      result.degenerate = result.degenerate || st.degenerate;
      result.monotone = result.monotone && st.monotone;
    }
  };
  auto current = [&] { return schedule.mode == DofMode::kFull6 ? full.pose : dec.current(); };

  run_pass(active, detail::Kernel::kHuber);

  {
    const auto T_cw = detail::camera_from_world(current(), cameras);
    for (const auto& o : active) {
      if (std::abs(detail::eval_obs(in, T_cw, o, false).r) <= cfg.outlier_cutoff) result.inliers.push_back(o);
    }
  }
  if (!result.inliers.empty()) run_pass(result.inliers, detail::Kernel::kNone);

  result.pose = current();
  result.euler = dec.euler;
  result.heading = dec.heading;
  result.heading_translation = dec.t_heading;
  result.final_cost = detail::mean_squared_residual(in, result.pose, active);
  result.inlier_count = result.inliers.size();
  result.confidence = compute_confidence(result.pose, result.inliers, cameras, costmaps, points, cfg.z_min);
  result.converged = !result.degenerate && !result.inliers.empty() && result.final_cost <= result.initial_cost + 1e-12;
  return result;
}

inline TrackResult align_photometric(const Pose& pred, std::span<const SampledPoint> points,
                                     std::span<const CameraModel> cameras, std::span<const CameraCostMaps> costmaps,
                                     const TrackerConfig& cfg, DofMode mode) {
  return align_photometric(pred, points, cameras, costmaps, cfg,
                           select_dof_mode(mode == DofMode::kFull6 ? LongitudinalConstraint::kConstrained
                                                                   : LongitudinalConstraint::kUnconstrained));
}

struct RollRefineResult {
  Pose pose;
  double roll_offset = 0.0;
  std::size_t evaluated = 0;
};

/// Brute-force roll search: offsets i * roll_step within +/- roll_range, the
/// lowest mean cost wins and ties go to the smaller |offset|.
inline RollRefineResult rotation_brute_refine(const Pose& pose, std::span<const SampledPoint> points,
                                              std::span<const CameraModel> cameras,
                                              std::span<const CameraCostMaps> costmaps, const TrackerConfig& cfg) {
  const auto m = static_cast<int>(std::floor(cfg.roll_range / cfg.roll_step + 1e-9));
  const EulerPose base = EulerPose::from_pose(pose);
  RollRefineResult best{pose, 0.0, 0};
  double best_cost = std::numeric_limits<double>::infinity();
  for (int i = -m; i <= m; ++i) {
    const double off = i * cfg.roll_step;
    EulerPose e = base;
    e.roll += off;
    const Pose candidate = i == 0 ? pose : e.to_pose();
    const auto sums = detail::accumulate_cost(candidate, cameras, costmaps, points, cfg.z_min);
    ++best.evaluated;
    if (sums.observations == 0) continue;
    const double cost = sums.residual_sum / static_cast<double>(sums.observations);
    const bool closer = std::abs(off) < std::abs(best.roll_offset);
    if (cost < best_cost || (cost == best_cost && closer)) {
      best_cost = cost;
      best.pose = candidate;
      best.roll_offset = off;
    }
  }
  return best;
}

}  // namespace semloc

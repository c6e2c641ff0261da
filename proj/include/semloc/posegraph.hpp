#pragma once

// Sliding-window fusion of per-frame alignment priors with wheel-odometry
// edges, and the Initializing / Tracking / Lost state machine.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "semloc/errors.hpp"
#include "semloc/geometry.hpp"

namespace semloc {

struct WindowFrame {
  std::size_t id = 0;
  Pose prior_pose;           // alignment result for this frame
  bool prior_valid = false;
  double prior_weight = 1.0;  // tracker confidence scales the prior information
  Vec6 prior_axis_weight = Vec6::Ones();  // per tangent axis, on top of prior_weight
  Pose odom_to_next;         // body-frame motion to the next frame in the window
  Pose optimized_pose;
};

struct GraphConfig {
  std::size_t window_capacity = 10;
  double lambda = 1.0;                 // odometry edge weight
  double stationary_threshold = 0.01;  // m
  int max_failures = 5;                // consecutive optimization failures before Lost
  int max_occluded = 10;               // consecutive occluded frames before Lost
  int max_iterations = 50;
  // prior weight on the body x axis of frames tracked without longitudinal
  // observability, whose position along the road comes from a GPS fix
  double unconstrained_longitudinal_weight = 1e-3;

  void validate() const {
    if (window_capacity < 2) throw Error(ErrorKind::kConfig, "window_capacity must be >= 2");
    if (lambda < 0.0) throw Error(ErrorKind::kConfig, "lambda must be >= 0");
    if (max_failures < 1 || max_occluded < 1) throw Error(ErrorKind::kConfig, "lost thresholds must be >= 1");
    if (!(unconstrained_longitudinal_weight >= 0.0)) {
      throw Error(ErrorKind::kConfig, "unconstrained_longitudinal_weight must be >= 0");
    }
  }
};

/// Consecutive frames are linked by `odom_to_next`; frame ids strictly increase.
struct Window {
  std::deque<WindowFrame> frames;

  bool empty() const { return frames.empty(); }
  std::size_t size() const { return frames.size(); }
  const WindowFrame& newest() const { return frames.back(); }
  void clear() { frames.clear(); }
};

/// Appends `frame`, linking it to the previous newest frame with
/// `odom_from_prev`. Over capacity, the second-newest frame is dropped when the
/// vehicle is stationary (its odometry is folded into the remaining edge),
/// otherwise the oldest. Returns the id of the removed frame, if any.
inline std::optional<std::size_t> add_frame(Window& window, WindowFrame frame, const Pose& odom_from_prev,
                                            const GraphConfig& cfg) {
  if (!window.empty()) {
    if (frame.id <= window.newest().id) {
      throw Error(ErrorKind::kNonMonotonicFrameId,
                  "frame " + std::to_string(frame.id) + " after " + std::to_string(window.newest().id));
    }
    window.frames.back().odom_to_next = odom_from_prev;
  }
  frame.odom_to_next = Pose::identity();
  window.frames.push_back(std::move(frame));
  if (window.size() <= cfg.window_capacity) return std::nullopt;

  const bool stationary = odom_from_prev.translation.norm() < cfg.stationary_threshold;
  if (stationary && window.size() >= 3) {
    const std::size_t k = window.size() - 2;
    auto& before = window.frames[k - 1];
    before.odom_to_next = before.odom_to_next * window.frames[k].odom_to_next;
    const std::size_t removed = window.frames[k].id;
    window.frames.erase(window.frames.begin() + static_cast<std::ptrdiff_t>(k));
    return removed;
  }
  const std::size_t removed = window.frames.front().id;
  window.frames.pop_front();
  return removed;
}

/// Inverse right Jacobian of SE(3), third-order series in ad(xi). Accurate for
/// the small residuals the window works with.
inline Mat6 se3_right_jacobian_inverse(const Vec6& xi) {
  const Mat6 ad = small_adjoint(xi);
  return Mat6::Identity() + 0.5 * ad + (1.0 / 12.0) * ad * ad;
}

/// Error of T relative to its prior, in the prior's body frame. Expressing it
/// in the world frame instead would couple rotation into translation through
/// the world-position lever arm.
inline Vec6 prior_residual(const Pose& T, const Pose& prior) { return se3_log(prior.inverse() * T); }

inline Vec6 odometry_residual(const Pose& Ti, const Pose& Tj, const Pose& Tij) {
  return se3_log(Tj.inverse() * Ti * Tij);
}

/// sum_i w_i |log(T_i*^-1 T_i)|_A^2 + lambda sum |log(T_j^-1 T_i T_ij)|^2, with A
/// the per-axis prior weights
inline double window_objective(const Window& window, const std::vector<Pose>& poses, double lambda) {
  double f = 0.0;
  for (std::size_t i = 0; i < window.size(); ++i) {
    const auto& fr = window.frames[i];
    if (fr.prior_valid) {
      const Vec6 r = prior_residual(poses[i], fr.prior_pose);
      f += fr.prior_weight * r.dot(fr.prior_axis_weight.cwiseProduct(r));
    }
    if (i + 1 < window.size()) f += lambda * odometry_residual(poses[i], poses[i + 1], fr.odom_to_next).squaredNorm();
  }
  return f;
}

struct OptimizeReport {
  double initial_objective = 0.0;
  double final_objective = 0.0;
  int iterations = 0;
  bool diverged = false;
  bool monotone = true;
  std::vector<double> trace;  // objective after every accepted step
};

/// Levenberg-Marquardt over right perturbations of every pose in the window.
/// On divergence the poses are left untouched.
inline OptimizeReport optimize_window(Window& window, const GraphConfig& cfg) {
  OptimizeReport rep;
  const std::size_t n = window.size();
  if (n == 0) return rep;

  std::vector<Pose> poses;
  for (const auto& f : window.frames) poses.push_back(f.optimized_pose);
  rep.initial_objective = window_objective(window, poses, cfg.lambda);
  rep.final_objective = rep.initial_objective;
  rep.trace.push_back(rep.initial_objective);

  if (cfg.lambda == 0.0) {
    // priors decouple; each pose sits on its own prior
    for (std::size_t i = 0; i < n; ++i) {
      if (window.frames[i].prior_valid) poses[i] = window.frames[i].prior_pose;
    }
    rep.final_objective = window_objective(window, poses, cfg.lambda);
    rep.trace.push_back(rep.final_objective);
    for (std::size_t i = 0; i < n; ++i) window.frames[i].optimized_pose = poses[i];
    return rep;
  }

  const auto dim = static_cast<Eigen::Index>(6 * n);
  auto linearize = [&](const std::vector<Pose>& P, Eigen::MatrixXd& H, Eigen::VectorXd& g) {
    H.setZero(dim, dim);
    g.setZero(dim);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& fr = window.frames[i];
      const auto bi = static_cast<Eigen::Index>(6 * i);
      if (fr.prior_valid) {
        const Vec6 r = prior_residual(P[i], fr.prior_pose);
        const Mat6 J = se3_right_jacobian_inverse(r);
        const Mat6 WJ = fr.prior_weight * fr.prior_axis_weight.asDiagonal() * J;
        H.block<6, 6>(bi, bi) += J.transpose() * WJ;
        g.segment<6>(bi) += WJ.transpose() * r;
      }
      if (i + 1 < n) {
        const auto bj = bi + 6;
        const Pose E = P[i + 1].inverse() * P[i] * fr.odom_to_next;
        const Vec6 r = se3_log(E);
        const Mat6 Jr = se3_right_jacobian_inverse(r);
        const Mat6 Ji = Jr * adjoint(fr.odom_to_next.inverse());
        const Mat6 Jj = -Jr * adjoint(E.inverse());
        H.block<6, 6>(bi, bi) += cfg.lambda * Ji.transpose() * Ji;
        H.block<6, 6>(bi, bj) += cfg.lambda * Ji.transpose() * Jj;
        H.block<6, 6>(bj, bi) += cfg.lambda * Jj.transpose() * Ji;
        H.block<6, 6>(bj, bj) += cfg.lambda * Jj.transpose() * Jj;
        g.segment<6>(bi) += cfg.lambda * Ji.transpose() * r;
        g.segment<6>(bj) += cfg.lambda * Jj.transpose() * r;
      }
    }
  };

  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  linearize(poses, H, g);
  double f = rep.initial_objective;
  double mu = 1e-6;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (f < 1e-24) break;
    ++rep.iterations;
    const double hmax = std::max(H.diagonal().maxCoeff(), 1e-300);
    Eigen::MatrixXd A = H;
    A.diagonal() += mu * (H.diagonal().array() + 1e-9 * hmax).matrix();
    const Eigen::VectorXd step = A.ldlt().solve(-g);
    if (!step.allFinite()) break;
    std::vector<Pose> candidate = poses;
    for (std::size_t i = 0; i < n; ++i) candidate[i] = poses[i] * se3_exp(step.segment<6>(static_cast<Eigen::Index>(6 * i)));
    const double fc = window_objective(window, candidate, cfg.lambda);
    if (fc < f) {
      const double rel = (f - fc) / f;
      poses = std::move(candidate);
      f = fc;
      rep.trace.push_back(f);
      mu = std::max(mu * 0.1, 1e-12);
      linearize(poses, H, g);
      if (rel < 1e-14 || step.norm() < 1e-13) break;
    } else {
      mu *= 10.0;
      if (mu > 1e10) break;
    }
  }
  rep.final_objective = f;
  for (std::size_t k = 1; k < rep.trace.size(); ++k) rep.monotone = rep.monotone && rep.trace[k] <= rep.trace[k - 1];
  if (!(f <= rep.initial_objective)) {
    rep.diverged = true;
    rep.final_objective = rep.initial_objective;
    return rep;
  }
  for (std::size_t i = 0; i < n; ++i) window.frames[i].optimized_pose = poses[i];
  return rep;
}

enum class LocState { kInitializing, kTracking, kLost };

inline const char* to_string(LocState s) {
  switch (s) {
    case LocState::kInitializing: return "initializing";
    case LocState::kTracking: return "tracking";
    case LocState::kLost: return "lost";
  }
  return "unknown";
}

struct LocalizationState {
  LocState state = LocState::kInitializing;
  int consecutive_failures = 0;
  int consecutive_occluded = 0;
};

/// What the caller learned about the current frame.
struct FrameOutcome {
  bool init_success = false;   // Initializing: initialization succeeded this frame
  bool track_success = false;  // Tracking: alignment converged with enough confidence
  bool solver_failed = false;  // Tracking: the window solver diverged
  bool occluded = false;
  bool out_of_domain = false;  // no map landmarks around the pose
};

enum class PoseAction {
  kEmitEstimate,  // the tracked / window-optimized pose
  kEmitBackup,    // the odometry-propagated pose before optimization
  kReinitialize,  // Lost -> Initializing; run initialization on this frame
};

struct StepResult {
  LocalizationState next;
  PoseAction action = PoseAction::kEmitBackup;
  std::string reason;
};

inline bool allowed_transition(LocState from, LocState to) {
  if (from == to) return from != LocState::kLost;
  return (from == LocState::kInitializing && to == LocState::kTracking) ||
         (from == LocState::kTracking && to == LocState::kLost) ||
         (from == LocState::kLost && to == LocState::kInitializing);
}

inline StepResult step(const LocalizationState& state, const FrameOutcome& outcome, const GraphConfig& cfg) {
  StepResult r{state, PoseAction::kEmitBackup, {}};
  switch (state.state) {
    case LocState::kLost:
      r.next = LocalizationState{};
      r.action = PoseAction::kReinitialize;
      r.reason = "reinitialize";
      return r;
    case LocState::kInitializing:
      if (outcome.init_success) {
        r.next = LocalizationState{LocState::kTracking, 0, 0};
        r.action = PoseAction::kEmitEstimate;
        r.reason = "initialized";
      }
      return r;
    case LocState::kTracking:
      break;
  }
  auto lose = [&](const std::string& why) {
    r.next.state = LocState::kLost;
    r.action = PoseAction::kEmitBackup;
    r.reason = why;
    return r;
  };
  if (outcome.out_of_domain) return lose("out of map domain");
  if (outcome.occluded) {
    ++r.next.consecutive_occluded;
    if (r.next.consecutive_occluded >= cfg.max_occluded) return lose("occluded for " + std::to_string(r.next.consecutive_occluded) + " frames");
    r.action = PoseAction::kEmitBackup;
    return r;
  }
  r.next.consecutive_occluded = 0;
  if (!outcome.track_success || outcome.solver_failed) {
    ++r.next.consecutive_failures;
    if (r.next.consecutive_failures >= cfg.max_failures) {
      return lose(std::to_string(r.next.consecutive_failures) + " consecutive optimization failures");
    }
  } else {
    r.next.consecutive_failures = 0;
  }
  r.action = outcome.solver_failed ? PoseAction::kEmitBackup : PoseAction::kEmitEstimate;
  return r;
}

}  // namespace semloc

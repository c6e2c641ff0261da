#pragma once

// Frame loop: initialize from GPS + grid search, then predict / align /
// fuse in the window, with the state machine deciding what gets emitted.

#include <chrono>
#include <cstddef>
#include <deque>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "semloc/costmap.hpp"
#include "semloc/errors.hpp"
#include "semloc/evaluation.hpp"
#include "semloc/geometry.hpp"
#include "semloc/hdmap.hpp"
#include "semloc/initializer.hpp"
#include "semloc/posegraph.hpp"
#include "semloc/simworld.hpp"
#include "semloc/tracker.hpp"

namespace semloc {

struct LocalizerConfig {
  CropConfig crop;
  CropConfig init_crop{80.0, 30.0, 2.0};  // coarser samples keep the grid search cheap
  CostMapParams costmap;
  InitializerConfig init;
  TrackerConfig tracker;
  GraphConfig graph;
  bool longitudinal_correction = true;
  bool roll_refine = true;
  double occlusion_fraction = 0.01;  // below this share of projections on a nonzero cost the frame is occluded
  std::size_t gps_history = 12;      // frames of GPS fixes kept for the heading baseline
  std::size_t init_budget = 0;       // frames allowed before InitializationFailed; 0 = whole sequence

  void validate() const {
    cfg_check(crop.range > 0.0 && crop.interval > 0.0 && init_crop.range > 0.0 && init_crop.interval > 0.0,
              "crop range and interval must be positive");
    cfg_check(occlusion_fraction >= 0.0 && occlusion_fraction <= 1.0, "occlusion_fraction must be in [0,1]");
    cfg_check(gps_history >= 2, "gps_history must be >= 2");
    cfg_check(costmap.ramp_width >= 1 && costmap.plateau_dilate >= 0 && costmap.truncation > 0.0,
              "invalid cost map parameters");
    cfg_check(init.min_separation > 0.0 && init.min_visible >= 0.0 && init.min_visible <= 1.0,
              "invalid initializer parameters");
    try {
      init.grid.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfig, e.what());
    }
    tracker.validate();
    graph.validate();
  }

 private:
  static void cfg_check(bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::kConfig, what);
  }
};

inline std::vector<CameraCostMaps> build_costmaps(const FrameMasks& masks, const CostMapParams& params) {
  std::vector<CameraCostMaps> out(masks.size());
  for (std::size_t c = 0; c < masks.size(); ++c) {
    for (std::size_t k = 0; k < kNumClasses; ++k) out[c][k] = build_costmap(masks[c][k], params);
  }
  return out;
}

/// Share of in-image projections that land on a nonzero cost; 0 when nothing projects.
inline double observed_fraction(const Pose& pose, std::span<const CameraModel> cameras,
                                std::span<const CameraCostMaps> costmaps, std::span<const SampledPoint> points,
                                double z_min) {
  std::size_t visible = 0, hits = 0;
  for (std::size_t c = 0; c < cameras.size(); ++c) {
    const Pose T_cw = (pose * cameras[c].extrinsic_bc).inverse();
    for (const auto& pt : points) {
      const auto u = try_project(cameras[c], T_cw * pt.position, z_min);
      if (!u) continue;
      const auto s = try_sample_bilinear(costmaps[c][class_index(pt.cls)], *u);
      if (!s) continue;
      ++visible;
      if (s->value > 0.0) ++hits;
    }
  }
  return visible ? static_cast<double>(hits) / static_cast<double>(visible) : 0.0;
}

struct FrameReport {
  std::size_t index = 0;
  double timestamp = 0.0;
  LocState state_before = LocState::kInitializing;
  LocState state_after = LocState::kInitializing;
  std::string reason;  // non-empty when the state changed
  bool emitted = false;
  Pose pose;
  PoseAction action = PoseAction::kEmitBackup;
  double confidence = 0.0;
  std::size_t inliers = 0;
  bool success = false;  // initialized or tracked with confidence above threshold
  bool init_attempted = false;
  bool occluded = false;
  bool out_of_domain = false;
  DofMode dof_mode = DofMode::kFull6;
  bool graph_monotone = true;
  double track_ms = 0.0;  // everything after the masks arrived
};

class Localizer {
 public:
  Localizer(const HdMap& map, std::vector<CameraModel> cameras, LocalizerConfig cfg)
      : map_(map), cameras_(std::move(cameras)), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cameras_.empty()) throw Error(ErrorKind::kConfig, "at least one camera is required");
    for (const auto& c : cameras_) c.validate();
  }

  LocState state() const { return state_.state; }
  bool has_pose() const { return last_pose_.has_value(); }
  const Window& window() const { return window_; }

  FrameReport process(const FrameBundle& frame) {
    const auto t0 = std::chrono::steady_clock::now();
    if (frame.masks.size() != cameras_.size()) {
      throw Error(ErrorKind::kValidation, "frame has " + std::to_string(frame.masks.size()) + " mask sets for " +
                                              std::to_string(cameras_.size()) + " cameras");
    }
    const auto& s = frame.sensors;
    if (s.gps_valid) {
      gps_.push_back({s.index, s.gps});
      while (gps_.size() > 1 && s.index - gps_.front().index >= cfg_.gps_history) gps_.pop_front();
    }
    std::optional<Pose> backup;
    if (last_pose_) backup = predict_pose(*last_pose_, s.odometry);

    FrameReport rep;
    rep.index = s.index;
    rep.timestamp = s.timestamp;
    rep.state_before = state_.state;

    if (state_.state == LocState::kLost) {
      const auto r = step(state_, {}, cfg_.graph);
      state_ = r.next;
      rep.reason = r.reason;
      window_.clear();
    }

    const auto costmaps = build_costmaps(frame.masks, cfg_.costmap);
    if (state_.state == LocState::kInitializing) {
      initialize(frame, costmaps, backup, rep);
    } else {
      track(frame, costmaps, *backup, rep);
    }
    rep.state_after = state_.state;
    if (rep.emitted) last_pose_ = rep.pose;
    rep.track_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rep;
  }

 private:
  struct Fix {
    std::size_t index;
    Vec2 position;
  };

  std::optional<Pose> coarse_pose(const SensorRecord& s) const {
    if (!s.gps_valid || gps_.size() < 2) return std::nullopt;
    try {
      return coarse_pose_from_gps(gps_.front().position, s.gps, map_, cfg_.init.min_separation,
                                  cfg_.init.z_lookup_radius);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kInsufficientSeparation || e.kind() == ErrorKind::kEmptyMapNeighborhood) {
        return std::nullopt;
      }
      throw;
    }
  }

  struct Alignment {
    TrackResult result;
    bool usable = false;
  };

  Alignment align(const Pose& pred, const SensorRecord& s, std::span<const CameraCostMaps> costmaps,
                  const std::vector<SampledPoint>& points, bool allow_correction) const {
    Alignment a;
    const auto constraint = detect_longitudinal_constraint(points, pred, cfg_.tracker);
    Pose start = pred;
    if (allow_correction && constraint == LongitudinalConstraint::kUnconstrained && cfg_.longitudinal_correction) {
      start = longitudinal_correction(pred, s.gps, s.gps_valid);
    }
    const auto schedule = select_dof_mode(constraint);
    try {
      a.result = align_photometric(start, points, cameras_, costmaps, cfg_.tracker, schedule);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNoVisiblePoints) throw;
      a.result.pose = start;
      a.result.dof_mode = schedule.mode;
      return a;
    }
    if (schedule.mode == DofMode::kDecoupled && cfg_.roll_refine) {
      const auto rr = rotation_brute_refine(a.result.pose, points, cameras_, costmaps, cfg_.tracker);
      a.result.pose = rr.pose;
      a.result.confidence =
          compute_confidence(rr.pose, a.result.inliers, cameras_, costmaps, points, cfg_.tracker.z_min);
    }
    a.usable = a.result.converged && a.result.confidence >= cfg_.tracker.confidence_success;
    return a;
  }

  void initialize(const FrameBundle& frame, std::span<const CameraCostMaps> costmaps,
                  const std::optional<Pose>& backup, FrameReport& rep) {
    const auto& s = frame.sensors;
    FrameOutcome outcome;
    Alignment a;
    if (const auto coarse = coarse_pose(s)) {
      rep.init_attempted = true;
      const auto init_points = crop_local_map(map_, *coarse, cfg_.init_crop);
      if (!init_points.empty()) {
        try {
          const auto grid = grid_search_refine(*coarse, cameras_, costmaps, init_points, cfg_.init);
          const auto points = crop_local_map(map_, grid.best.pose, cfg_.crop);
          if (!points.empty()) a = align(grid.best.pose, s, costmaps, points, false);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kAllCandidatesInvalid && e.kind() != ErrorKind::kNoVisiblePoints) throw;
        }
      }
      outcome.init_success = a.usable;
    }
    const auto r = step(state_, outcome, cfg_.graph);
    if (r.next.state != state_.state) rep.reason = r.reason;
    state_ = r.next;
    rep.action = r.action;
    rep.confidence = a.result.confidence;
    rep.inliers = a.result.inlier_count;
    rep.dof_mode = a.result.dof_mode;
    if (outcome.init_success) {
      window_.clear();
      WindowFrame wf;
      wf.id = s.index;
      wf.prior_pose = a.result.pose;
      wf.prior_valid = true;
      wf.prior_weight = a.result.confidence;
      wf.optimized_pose = a.result.pose;
      add_frame(window_, wf, s.odometry, cfg_.graph);
      rep.success = true;
      rep.emitted = true;
      rep.pose = a.result.pose;
    } else if (backup) {
      rep.emitted = true;
      rep.pose = *backup;
    }
  }

  void track(const FrameBundle& frame, std::span<const CameraCostMaps> costmaps, const Pose& pred,
             FrameReport& rep) {
    const auto& s = frame.sensors;
    FrameOutcome outcome;
    Alignment a;
    const auto points = crop_local_map(map_, pred, cfg_.crop);
    if (points.empty()) {
      outcome.out_of_domain = true;
    } else if (observed_fraction(pred, cameras_, costmaps, points, cfg_.tracker.z_min) < cfg_.occlusion_fraction) {
      outcome.occluded = true;
    } else {
      a = align(pred, s, costmaps, points, true);
      outcome.track_success = a.usable;
    }

    WindowFrame wf;
    wf.id = s.index;
    wf.prior_valid = outcome.track_success;
    wf.prior_pose = outcome.track_success ? a.result.pose : pred;
    wf.prior_weight = a.result.confidence;
    if (a.result.dof_mode == DofMode::kDecoupled) wf.prior_axis_weight[0] = cfg_.graph.unconstrained_longitudinal_weight;
    wf.optimized_pose = wf.prior_pose;
    add_frame(window_, wf, s.odometry, cfg_.graph);
    const auto opt = optimize_window(window_, cfg_.graph);
    outcome.solver_failed = opt.diverged;

    const auto r = step(state_, outcome, cfg_.graph);
    if (r.next.state != state_.state) rep.reason = r.reason;
    state_ = r.next;
    rep.action = r.action;
    rep.occluded = outcome.occluded;
    rep.out_of_domain = outcome.out_of_domain;
    rep.confidence = a.result.confidence;
    rep.inliers = a.result.inlier_count;
    rep.dof_mode = a.result.dof_mode;
    rep.success = outcome.track_success;
    rep.graph_monotone = opt.monotone;
    rep.emitted = true;
    rep.pose = r.action == PoseAction::kEmitEstimate ? window_.newest().optimized_pose : pred;
  }

  const HdMap& map_;
  std::vector<CameraModel> cameras_;
  LocalizerConfig cfg_;
  LocalizationState state_;
  Window window_;
  std::deque<Fix> gps_;
  std::optional<Pose> last_pose_;
};

struct RunResult {
  Trajectory estimate;
  Trajectory reference;
  std::vector<FrameReport> frames;
};

/// Runs frames [first, last) of a source. Throws InitializationFailed when no
/// initialization succeeds within the configured budget.
inline RunResult run_localizer(const HdMap& map, const FrameSource& source, const std::vector<CameraModel>& cameras,
                               const LocalizerConfig& cfg, std::size_t first = 0,
                               std::size_t last = static_cast<std::size_t>(-1)) {
  Localizer loc(map, cameras, cfg);
  RunResult out;
  last = std::min(last, source.size());
  for (std::size_t k = first; k < last; ++k) {
    const FrameBundle frame = source.frame(k);
    auto rep = loc.process(frame);
    out.reference.push_back(frame.sensors.timestamp, frame.sensors.ground_truth);
    if (rep.emitted) out.estimate.push_back(rep.timestamp, rep.pose);
    out.frames.push_back(std::move(rep));
    if (!loc.has_pose() && cfg.init_budget > 0 && k + 1 - first >= cfg.init_budget) break;
  }
  if (out.estimate.empty()) {
    throw Error(ErrorKind::kInitializationFailed,
                "no successful initialization in " + std::to_string(out.frames.size()) + " frames");
  }
  return out;
}

/// Share of start frames from which a confident pose is reached within
/// `budget` frames.
inline double init_success_rate(const HdMap& map, const FrameSource& source, const std::vector<CameraModel>& cameras,
                                const LocalizerConfig& cfg, std::size_t budget, const std::vector<std::size_t>& starts) {
  if (budget < 1) throw Error(ErrorKind::kValidation, "budget must be >= 1");
  if (starts.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t s : starts) {
    Localizer loc(map, cameras, cfg);
    for (std::size_t k = s; k < std::min(source.size(), s + budget); ++k) {
      if (loc.process(source.frame(k)).success) {
        ++ok;
        break;
      }
    }
  }
  return static_cast<double>(ok) / static_cast<double>(starts.size());
}

inline std::vector<std::size_t> default_start_frames(std::size_t frames, std::size_t budget, std::size_t stride = 1) {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s + budget <= frames; s += std::max<std::size_t>(stride, 1)) out.push_back(s);
  return out;
}

inline const char* to_string(PoseAction a) {
  switch (a) {
    case PoseAction::kEmitEstimate: return "estimate";
    case PoseAction::kEmitBackup: return "backup";
    case PoseAction::kReinitialize: return "reinitialize";
  }
  return "?";
}

/// index,timestamp,state,success,confidence,inliers,dof,occluded,action,track_ms
inline void write_confidence_log(std::ostream& out, const std::vector<FrameReport>& frames) {
  out << "index,timestamp,state,success,confidence,inliers,dof,occluded,action,track_ms\n";
  char buf[256];
  for (const auto& f : frames) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%s,%d,%.6f,%zu,%s,%d,%s,%.3f\n", f.index, f.timestamp,
                  to_string(f.state_after), f.success ? 1 : 0, f.confidence, f.inliers, to_string(f.dof_mode),
                  f.occluded ? 1 : 0, f.emitted ? to_string(f.action) : "none", f.track_ms);
    out << buf;
  }
}

/// One line per state change: `index timestamp from to reason`.
inline void write_state_log(std::ostream& out, const std::vector<FrameReport>& frames) {
  for (const auto& f : frames) {
    if (f.reason.empty()) continue;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu %.17g %s %s ", f.index, f.timestamp, to_string(f.state_before),
                  to_string(f.state_after));
    out << buf << f.reason << '\n';
  }
}

}  // namespace semloc

#pragma once

// Synthetic world: road maps with lane markings, poles and signboards, a
// ground-truth drive along the road, geometric semantic masks per camera and
// noisy wheel odometry / GPS. Everything is a deterministic function of the
// specs and the seed.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "semloc/costmap.hpp"
#include "semloc/errors.hpp"
#include "semloc/geometry.hpp"
#include "semloc/hdmap.hpp"

namespace semloc {

struct RoadSegment {
  double length = 100.0;    // m
  double curvature = 0.0;   // 1/m, positive turns left
};

struct SignboardPlacement {
  double arclength = 0.0;  // along the road centerline, m
  double lateral = 0.0;    // left of the centerline, m
  double bottom = 4.0;     // height of the lower edge, m
  double width = 3.0;
  double height = 1.5;
};

struct WorldSpec {
  int lane_count = 2;
  double lane_width = 3.75;
  std::vector<RoadSegment> segments{{2000.0, 0.0}};
  Vec3 origin = Vec3::Zero();  // start of the centerline
  double origin_heading = 0.0;

  double lane_vertex_spacing = 1.0;  // m between stored lane polyline vertices
  double lane_chunk_length = 20.0;   // lane markings are split into landmarks of this length

  double pole_spacing = 30.0;  // <= 0 disables poles
  double pole_offset = 1.5;    // beyond the outer lane marking, m
  double pole_height = 6.0;
  double pole_jitter = 2.0;    // uniform +/- along the road, m
  std::vector<SignboardPlacement> signboards;

  // ground-truth drive
  int frames = 500;
  double frame_dt = 0.1;
  double speed = 30.0;         // m/s
  double start_arclength = 20.0;
  int vehicle_lane = 0;        // 0 = rightmost lane
  double wander_amplitude = 0.3;  // lateral sinusoid inside the lane, m
  double wander_period = 200.0;   // m
  double roll_amplitude = 0.0;    // rad
  double pitch_amplitude = 0.0;   // rad

  std::uint64_t seed = 1;

  double road_length() const {
    double l = 0.0;
    for (const auto& s : segments) l += s.length;
    return l;
  }

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorKind::kInvalidSpec, m); };
    if (lane_count < 1) bad("lane_count must be >= 1");
    if (!(lane_width > 0.0)) bad("lane_width must be positive");
    if (segments.empty()) bad("road needs at least one segment");
    const double half = 0.5 * lane_count * lane_width + pole_offset;
    for (const auto& s : segments) {
      if (!(s.length > 0.0)) bad("segment length must be positive");
      if (std::abs(s.curvature) * half >= 1.0) bad("segment curvature too tight for road width");
    }
    if (!(lane_vertex_spacing > 0.0) || !(lane_chunk_length >= lane_vertex_spacing)) bad("invalid lane sampling");
    if (frames < 0 || !(frame_dt > 0.0) || speed < 0.0) bad("invalid drive timing");
    if (vehicle_lane < 0 || vehicle_lane >= lane_count) bad("vehicle_lane out of range");
    if (std::abs(wander_amplitude) * 2.0 >= lane_width) bad("wander leaves the lane");
    if (!(wander_period > 0.0)) bad("wander_period must be positive");
    const double end = start_arclength + speed * frame_dt * std::max(frames - 1, 0);
    if (start_arclength < 0.0 || end > road_length()) bad("drive does not fit on the road");
  }
};

/// Position, heading and curvature on the road centerline at arclength s.
struct CenterlinePoint {
  Vec2 position;
  double heading = 0.0;
  double curvature = 0.0;

  Vec2 tangent() const { return {std::cos(heading), std::sin(heading)}; }
  Vec2 left() const { return {-std::sin(heading), std::cos(heading)}; }
};

inline CenterlinePoint centerline_at(const WorldSpec& spec, double s) {
  Vec2 p = spec.origin.head<2>();
  double h = spec.origin_heading;
  double remaining = std::max(0.0, s);
  for (std::size_t i = 0; i < spec.segments.size(); ++i) {
    const auto& seg = spec.segments[i];
    const bool last = i + 1 == spec.segments.size();
    const double ds = last ? remaining : std::min(remaining, seg.length);
    const double k = seg.curvature;
    if (std::abs(k) < 1e-12) {
      p += ds * Vec2(std::cos(h), std::sin(h));
    } else {
      p += Vec2(std::sin(h + k * ds) - std::sin(h), -std::cos(h + k * ds) + std::cos(h)) / k;
    }
    h += k * ds;
    remaining -= ds;
    if (remaining <= 0.0 || last) return {p, h, k};
  }
  return {p, h, 0.0};
}

/// Lateral offsets of the lane markings, rightmost first.
inline std::vector<double> lane_marking_offsets(const WorldSpec& spec) {
  std::vector<double> out;
  for (int k = 0; k <= spec.lane_count; ++k) out.push_back((k - 0.5 * spec.lane_count) * spec.lane_width);
  return out;
}

inline double lane_center_offset(const WorldSpec& spec, int lane) {
  return (lane + 0.5 - 0.5 * spec.lane_count) * spec.lane_width;
}

inline Vec3 road_point(const WorldSpec& spec, double s, double lateral, double z = 0.0) {
  const auto c = centerline_at(spec, s);
  const Vec2 xy = c.position + lateral * c.left();
  return {xy.x(), xy.y(), spec.origin.z() + z};
}

struct World {
  HdMap map;
  std::vector<Pose> trajectory;
  std::vector<double> timestamps;
};

inline World generate_world(const WorldSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<Landmark> landmarks;
  std::int64_t next_id = 1;
  const double length = spec.road_length();

  for (double offset : lane_marking_offsets(spec)) {
    for (double s0 = 0.0; s0 < length - 1e-9; s0 += spec.lane_chunk_length) {
      const double s1 = std::min(length, s0 + spec.lane_chunk_length);
      Landmark lm{next_id++, LandmarkClass::kLaneMarking, {}};
      const auto n = static_cast<int>(std::max(1.0, std::ceil((s1 - s0) / spec.lane_vertex_spacing - 1e-9)));
      for (int i = 0; i <= n; ++i) lm.points.push_back(road_point(spec, s0 + (s1 - s0) * i / n, offset));
      landmarks.push_back(std::move(lm));
    }
  }

  if (spec.pole_spacing > 0.0) {
    std::uniform_real_distribution<double> jitter(-spec.pole_jitter, spec.pole_jitter);
    const double side = 0.5 * spec.lane_count * spec.lane_width + spec.pole_offset;
    for (double s = spec.pole_spacing; s < length; s += spec.pole_spacing) {
      for (double lateral : {-side, side}) {
        const double sj = std::clamp(s + jitter(rng), 0.0, length);
        const Vec3 base = road_point(spec, sj, lateral);
        landmarks.push_back({next_id++, LandmarkClass::kPole, {base, base + Vec3(0.0, 0.0, spec.pole_height)}});
      }
    }
  }

  for (const auto& sb : spec.signboards) {
    const auto c = centerline_at(spec, sb.arclength);
    const Vec2 left = c.left();
    const Vec3 mid = road_point(spec, sb.arclength, sb.lateral);
    const Vec3 half(0.5 * sb.width * left.x(), 0.5 * sb.width * left.y(), 0.0);
    const Vec3 lo(0.0, 0.0, sb.bottom), hi(0.0, 0.0, sb.bottom + sb.height);
    landmarks.push_back({next_id++, LandmarkClass::kSignboard,
                         {mid - half + lo, mid + half + lo, mid + half + hi, mid - half + hi}});
  }

  World world;
  world.map = HdMap(std::move(landmarks));
  const double base_lateral = lane_center_offset(spec, spec.vehicle_lane);
  const double w = 2.0 * kPi / spec.wander_period;
  for (int k = 0; k < spec.frames; ++k) {
    const double s = spec.start_arclength + spec.speed * spec.frame_dt * k;
    const auto c = centerline_at(spec, s);
    const double lateral = base_lateral + spec.wander_amplitude * std::sin(w * s);
    const double dlateral = spec.wander_amplitude * w * std::cos(w * s);
    // d/ds of c(s) + l(s) n(s) = t (1 - k l) + l' n
    const Vec2 dir = (1.0 - c.curvature * lateral) * c.tangent() + dlateral * c.left();
    EulerPose e;
    e.yaw = std::atan2(dir.y(), dir.x());
    e.roll = spec.roll_amplitude * std::sin(0.5 * w * s);
    e.pitch = spec.pitch_amplitude * std::sin(0.7 * w * s);
    e.translation = road_point(spec, s, lateral);
    world.trajectory.push_back(e.to_pose());
    world.timestamps.push_back(k * spec.frame_dt);
  }
  return world;
}

using CameraMasks = std::array<SegMask, kNumClasses>;
using FrameMasks = std::vector<CameraMasks>;

inline CameraMasks empty_masks(const CameraModel& cam) {
  return {SegMask(cam.width, cam.height, LandmarkClass::kLaneMarking),
          SegMask(cam.width, cam.height, LandmarkClass::kPole),
          SegMask(cam.width, cam.height, LandmarkClass::kSignboard)};
}

namespace detail {

// Marks every pixel whose center lies within `radius` of the segment ab.
inline void raster_capsule(SegMask& mask, const Vec2& a, const Vec2& b, double radius) {
  const double x0 = std::max(0.0, std::floor(std::min(a.x(), b.x()) - radius));
  const double x1 = std::min(mask.width - 1.0, std::ceil(std::max(a.x(), b.x()) + radius));
  const double y0 = std::max(0.0, std::floor(std::min(a.y(), b.y()) - radius));
  const double y1 = std::min(mask.height - 1.0, std::ceil(std::max(a.y(), b.y()) + radius));
  if (x0 > x1 || y0 > y1) return;
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double r2 = radius * radius;
  for (int y = static_cast<int>(y0); y <= static_cast<int>(y1); ++y) {
    for (int x = static_cast<int>(x0); x <= static_cast<int>(x1); ++x) {
      const Vec2 p(x, y);
      double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      if ((a + t * ab - p).squaredNorm() <= r2) mask.at(x, y) = 1;
    }
  }
}

inline void raster_polygon(SegMask& mask, const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return;
  double ymin = poly[0].y(), ymax = poly[0].y();
  for (const auto& p : poly) {
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  const int y0 = std::max(0, static_cast<int>(std::ceil(ymin)));
  const int y1 = std::min(mask.height - 1, static_cast<int>(std::floor(ymax)));
  std::vector<double> xs;
  for (int y = y0; y <= y1; ++y) {
    xs.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2& a = poly[i];
      const Vec2& b = poly[(i + 1) % poly.size()];
      if ((a.y() <= y && b.y() > y) || (b.y() <= y && a.y() > y)) {
        xs.push_back(a.x() + (y - a.y()) / (b.y() - a.y()) * (b.x() - a.x()));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const int xa = std::max(0, static_cast<int>(std::ceil(xs[i])));
      const int xb = std::min(mask.width - 1, static_cast<int>(std::floor(xs[i + 1])));
      for (int x = xa; x <= xb; ++x) mask.at(x, y) = 1;
    }
  }
}

// Clips the camera-frame segment to z >= z_min. Returns false if nothing remains.
inline bool clip_near(Vec3& a, Vec3& b, double z_min) {
  if (a.z() < z_min && b.z() < z_min) return false;
  if (a.z() < z_min) a = a + (z_min - a.z()) / (b.z() - a.z()) * (b - a);
  if (b.z() < z_min) b = b + (z_min - b.z()) / (a.z() - b.z()) * (a - b);
  return true;
}

inline std::vector<Vec3> clip_polygon_near(const std::vector<Vec3>& poly, double z_min) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec3& a = poly[i];
    const Vec3& b = poly[(i + 1) % poly.size()];
    const bool ain = a.z() >= z_min, bin = b.z() >= z_min;
    if (ain) out.push_back(a);
    if (ain != bin) out.push_back(a + (z_min - a.z()) / (b.z() - a.z()) * (b - a));
  }
  return out;
}

}  // namespace detail

struct RenderConfig {
  double thickness = 3.0;       // rendered line width, px
  double range = 150.0;         // landmarks farther than this are not drawn, m
  double z_min = 2.0 * kDefaultZMin;
};

/// Geometric semantic masks: lane markings and poles are drawn as lines of
/// width `thickness`, signboards as filled polygons. No occlusion.
inline CameraMasks render_masks(const HdMap& map, const CameraModel& cam, const Pose& pose_wb,
                                const RenderConfig& cfg = {}) {
  CameraMasks masks = empty_masks(cam);
  if (map.empty()) return masks;
  const Pose T_cw = (pose_wb * cam.extrinsic_bc).inverse();
  const double radius = 0.5 * cfg.thickness;
  for (const Landmark* lm : map.query_radius(pose_wb.translation, cfg.range)) {
    SegMask& mask = masks[class_index(lm->cls)];
    if (lm->cls == LandmarkClass::kSignboard) {
      std::vector<Vec3> poly;
      for (const auto& p : lm->points) poly.push_back(T_cw * p);
      poly = detail::clip_polygon_near(poly, cfg.z_min);
      if (poly.size() < 3) continue;
      std::vector<Vec2> image;
      for (const auto& p : poly) image.push_back(project(cam, p, 0.0));
      detail::raster_polygon(mask, image);
      continue;
    }
    for (std::size_t i = 0; i < lm->segment_count(); ++i) {
      auto [a, b] = lm->segment(i);
      Vec3 ca = T_cw * a, cb = T_cw * b;
      if (!detail::clip_near(ca, cb, cfg.z_min)) continue;
      detail::raster_capsule(mask, project(cam, ca, 0.0), project(cam, cb, 0.0), radius);
    }
  }
  return masks;
}

inline CameraMasks render_masks(const HdMap& map, const CameraModel& cam, const Pose& pose_wb, double thickness) {
  RenderConfig cfg;
  cfg.thickness = thickness;
  return render_masks(map, cam, pose_wb, cfg);
}

struct SensorNoiseSpec {
  double odom_translation_sigma = 0.0;  // per meter traveled, per horizontal axis
  double odom_yaw_sigma = 0.0;          // rad per meter traveled
  double odom_scale_bias = 0.0;         // fractional scale error of the wheel odometry
  double gps_sigma = 0.0;               // m, per horizontal axis
  double gps_dropout = 0.0;             // probability that a fix is missing
  double pixel_flip_prob = 0.0;         // Bernoulli mask noise

  void validate() const {
    if (odom_translation_sigma < 0.0 || odom_yaw_sigma < 0.0 || gps_sigma < 0.0) {
      throw Error(ErrorKind::kInvalidSpec, "noise sigmas must be non-negative");
    }
    if (!(gps_dropout >= 0.0 && gps_dropout <= 1.0)) throw Error(ErrorKind::kInvalidSpec, "gps_dropout must be in [0,1]");
    if (!(pixel_flip_prob >= 0.0 && pixel_flip_prob <= 1.0)) {
      throw Error(ErrorKind::kInvalidSpec, "pixel_flip_prob must be in [0,1]");
    }
  }
};

/// Frames [first, last] of camera `camera` get all-empty masks; camera < 0
/// blanks every camera.
struct MaskBlanking {
  int camera = -1;
  std::size_t first = 0;
  std::size_t last = 0;

  bool covers(std::size_t frame, std::size_t cam) const {
    return frame >= first && frame <= last && (camera < 0 || static_cast<std::size_t>(camera) == cam);
  }
};

/// Non-image sensor data for one frame. `odometry` is the body-frame motion
/// from the previous frame to this one (identity on the first frame).
struct SensorRecord {
  std::size_t index = 0;
  double timestamp = 0.0;
  Pose odometry;
  Vec2 gps = Vec2::Zero();
  bool gps_valid = false;
  Pose ground_truth;
};

struct FrameBundle {
  SensorRecord sensors;
  FrameMasks masks;  // one CameraMasks per camera
};

/// A sequence whose masks are produced on demand, so long runs do not keep
/// every rendered image in memory.
struct FrameSource {
  std::vector<SensorRecord> records;
  std::function<FrameMasks(std::size_t)> masks;

  std::size_t size() const { return records.size(); }
  FrameBundle frame(std::size_t k) const { return {records.at(k), masks(k)}; }
};

inline std::vector<SensorRecord> simulate_sensors(const std::vector<Pose>& trajectory,
                                                  const std::vector<double>& timestamps,
                                                  const SensorNoiseSpec& noise, std::uint64_t seed) {
  noise.validate();
  std::seed_seq odom_seq{seed, std::uint64_t{0x0d0}};
  std::seed_seq gps_seq{seed, std::uint64_t{0x695}};
  std::mt19937_64 odom_rng(odom_seq), gps_rng(gps_seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  std::vector<SensorRecord> out;
  out.reserve(trajectory.size());
  for (std::size_t k = 0; k < trajectory.size(); ++k) {
    SensorRecord r;
    r.index = k;
    r.timestamp = k < timestamps.size() ? timestamps[k] : static_cast<double>(k);
    r.ground_truth = trajectory[k];
    if (k > 0) {
      Pose inc = trajectory[k - 1].inverse() * trajectory[k];
      const double d = inc.translation.norm();
      const double ex = normal(odom_rng), ey = normal(odom_rng), eyaw = normal(odom_rng);
      inc.translation *= 1.0 + noise.odom_scale_bias;
      inc.translation.x() += noise.odom_translation_sigma * d * ex;
      inc.translation.y() += noise.odom_translation_sigma * d * ey;
      inc.rotation = inc.rotation * rot_z(noise.odom_yaw_sigma * d * eyaw);
      r.odometry = inc;
    }
    const double gx = normal(gps_rng), gy = normal(gps_rng);
    const double drop = uniform(gps_rng);
    r.gps = trajectory[k].translation.head<2>() + noise.gps_sigma * Vec2(gx, gy);
    r.gps_valid = drop >= noise.gps_dropout;
    out.push_back(r);
  }
  return out;
}

inline void flip_pixels(SegMask& mask, double prob, std::mt19937_64& rng) {
  if (prob <= 0.0) return;
  std::bernoulli_distribution flip(prob);
  for (auto& v : mask.data) {
    if (flip(rng)) v = v ? 0 : 1;
  }
}

struct SimulationOptions {
  RenderConfig render;
  std::vector<MaskBlanking> blanking;
};

/// Lazily rendered synthetic sequence. The map must outlive the source.
inline FrameSource make_simulated_source(const HdMap& map, const std::vector<Pose>& trajectory,
                                         const std::vector<double>& timestamps,
                                         const std::vector<CameraModel>& cameras, const SensorNoiseSpec& noise,
                                         std::uint64_t seed, const SimulationOptions& options = {}) {
  FrameSource src;
  src.records = simulate_sensors(trajectory, timestamps, noise, seed);
  src.masks = [&map, trajectory, cameras, noise, seed, options](std::size_t k) {
    FrameMasks out;
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      bool blank = false;
      for (const auto& b : options.blanking) blank = blank || b.covers(k, c);
      if (blank) {
        out.push_back(empty_masks(cameras[c]));
        continue;
      }
      CameraMasks m = render_masks(map, cameras[c], trajectory.at(k), options.render);
      if (noise.pixel_flip_prob > 0.0) {
        std::seed_seq seq{seed, std::uint64_t{0xf11b}, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(c)};
        std::mt19937_64 rng(seq);
        for (auto& mask : m) flip_pixels(mask, noise.pixel_flip_prob, rng);
      }
      out.push_back(std::move(m));
    }
    return out;
  };
  return src;
}

/// Eager variant: every frame with its rendered masks.
inline std::vector<FrameBundle> simulate_sequence(const HdMap& map, const std::vector<Pose>& trajectory,
                                                  const std::vector<CameraModel>& cameras,
                                                  const SensorNoiseSpec& noise, std::uint64_t seed,
                                                  const SimulationOptions& options = {}) {
  std::vector<double> timestamps;
  for (std::size_t k = 0; k < trajectory.size(); ++k) timestamps.push_back(0.1 * static_cast<double>(k));
  const FrameSource src = make_simulated_source(map, trajectory, timestamps, cameras, noise, seed, options);
  std::vector<FrameBundle> out;
  for (std::size_t k = 0; k < src.size(); ++k) out.push_back(src.frame(k));
  return out;
}

}  // namespace semloc

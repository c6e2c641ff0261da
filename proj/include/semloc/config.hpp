#pragma once

// JSON configuration for the command-line tool. Unknown keys are rejected so
// that typos surface as ConfigError instead of silently using defaults.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "semloc/errors.hpp"
#include "semloc/geometry.hpp"
#include "semloc/initializer.hpp"
#include "semloc/pipeline.hpp"
#include "semloc/simworld.hpp"

namespace semloc {

using Json = nlohmann::json;

namespace config_detail {

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorKind::kConfig, where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kConfig, where + "." + key + ": " + e.what());
  }
}

inline void read_deg(const Json& j, const char* key, double& out_rad, const std::string& where) {
  double deg = rad2deg(out_rad);
  read(j, key, deg, where);
  out_rad = deg2rad(deg);
}

inline Vec3 read_vec3(const Json& j, const std::string& where) {
  std::vector<double> v;
  try {
    v = j.get<std::vector<double>>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kConfig, where + ": " + e.what());
  }
  if (v.size() != 3) throw Error(ErrorKind::kConfig, where + ": expected 3 numbers");
  return {v[0], v[1], v[2]};
}

}  // namespace config_detail

/// {"fx","fy","cx","cy","width","height"} plus either
/// {"position":[x,y,z], "yaw_deg", "pitch_down_deg"} for a level camera or
/// {"extrinsic":{"translation":[..], "quaternion":[qx,qy,qz,qw]}}.
inline CameraModel parse_camera(const Json& j, const std::string& where) {
  using namespace config_detail;
  check_keys(j, {"fx", "fy", "cx", "cy", "width", "height", "position", "yaw_deg", "pitch_down_deg", "extrinsic"},
             where);
  CameraModel cam;
  read(j, "fx", cam.fx, where);
  read(j, "fy", cam.fy, where);
  read(j, "cx", cam.cx, where);
  read(j, "cy", cam.cy, where);
  read(j, "width", cam.width, where);
  read(j, "height", cam.height, where);
  if (j.contains("extrinsic")) {
    const auto& e = j.at("extrinsic");
    check_keys(e, {"translation", "quaternion"}, where + ".extrinsic");
    std::vector<double> q{0, 0, 0, 1};
    read(e, "quaternion", q, where + ".extrinsic");
    if (q.size() != 4) throw Error(ErrorKind::kConfig, where + ".extrinsic.quaternion: expected 4 numbers");
    const Vec3 t = e.contains("translation") ? read_vec3(e.at("translation"), where + ".extrinsic.translation")
                                             : Vec3::Zero();
    cam.extrinsic_bc = Pose::from_quaternion(Eigen::Quaterniond(q[3], q[0], q[1], q[2]), t);
  } else {
    const Vec3 pos = j.contains("position") ? read_vec3(j.at("position"), where + ".position") : Vec3(1.0, 0.0, 1.5);
    double yaw = 0.0, pitch = 0.0;
    read_deg(j, "yaw_deg", yaw, where);
    read_deg(j, "pitch_down_deg", pitch, where);
    cam.extrinsic_bc = forward_camera_extrinsic(pos, yaw, pitch);
  }
  try {
    cam.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, where + ": " + e.what());
  }
  return cam;
}

inline std::vector<CameraModel> parse_cameras(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw Error(ErrorKind::kConfig, where + ": expected a non-empty array");
  std::vector<CameraModel> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(parse_camera(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

inline WorldSpec parse_world(const Json& j, const std::string& where) {
  using namespace config_detail;
  check_keys(j, {"lane_count", "lane_width", "segments", "origin", "origin_heading_deg", "lane_vertex_spacing",
                 "lane_chunk_length", "pole_spacing", "pole_offset", "pole_height", "pole_jitter", "signboards",
                 "frames", "frame_dt", "speed", "start_arclength", "vehicle_lane", "wander_amplitude",
                 "wander_period", "roll_amplitude_deg", "pitch_amplitude_deg", "seed"},
             where);
  WorldSpec w;
  read(j, "lane_count", w.lane_count, where);
  read(j, "lane_width", w.lane_width, where);
  if (j.contains("segments")) {
    w.segments.clear();
    for (const auto& s : j.at("segments")) {
      check_keys(s, {"length", "curvature"}, where + ".segments");
      RoadSegment seg;
      read(s, "length", seg.length, where + ".segments");
      read(s, "curvature", seg.curvature, where + ".segments");
      w.segments.push_back(seg);
    }
  }
  if (j.contains("origin")) w.origin = read_vec3(j.at("origin"), where + ".origin");
  read_deg(j, "origin_heading_deg", w.origin_heading, where);
  read(j, "lane_vertex_spacing", w.lane_vertex_spacing, where);
  read(j, "lane_chunk_length", w.lane_chunk_length, where);
  read(j, "pole_spacing", w.pole_spacing, where);
  read(j, "pole_offset", w.pole_offset, where);
  read(j, "pole_height", w.pole_height, where);
  read(j, "pole_jitter", w.pole_jitter, where);
  if (j.contains("signboards")) {
    for (const auto& s : j.at("signboards")) {
      check_keys(s, {"arclength", "lateral", "bottom", "width", "height"}, where + ".signboards");
      SignboardPlacement p;
      read(s, "arclength", p.arclength, where + ".signboards");
      read(s, "lateral", p.lateral, where + ".signboards");
      read(s, "bottom", p.bottom, where + ".signboards");
      read(s, "width", p.width, where + ".signboards");
      read(s, "height", p.height, where + ".signboards");
      w.signboards.push_back(p);
    }
  }
  read(j, "frames", w.frames, where);
  read(j, "frame_dt", w.frame_dt, where);
  read(j, "speed", w.speed, where);
  read(j, "start_arclength", w.start_arclength, where);
  read(j, "vehicle_lane", w.vehicle_lane, where);
  read(j, "wander_amplitude", w.wander_amplitude, where);
  read(j, "wander_period", w.wander_period, where);
  read_deg(j, "roll_amplitude_deg", w.roll_amplitude, where);
  read_deg(j, "pitch_amplitude_deg", w.pitch_amplitude, where);
  read(j, "seed", w.seed, where);
  try {
    w.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, where + ": " + e.what());
  }
  return w;
}

inline SensorNoiseSpec parse_noise(const Json& j, const std::string& where) {
  using namespace config_detail;
  check_keys(j, {"odom_translation_sigma", "odom_yaw_sigma", "odom_scale_bias", "gps_sigma", "gps_dropout",
                 "pixel_flip_prob"},
             where);
  SensorNoiseSpec n;
  read(j, "odom_translation_sigma", n.odom_translation_sigma, where);
  read(j, "odom_yaw_sigma", n.odom_yaw_sigma, where);
  read(j, "odom_scale_bias", n.odom_scale_bias, where);
  read(j, "gps_sigma", n.gps_sigma, where);
  read(j, "gps_dropout", n.gps_dropout, where);
  read(j, "pixel_flip_prob", n.pixel_flip_prob, where);
  try {
    n.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, where + ": " + e.what());
  }
  return n;
}

inline SimulationOptions parse_simulation(const Json& j, const std::string& where) {
  using namespace config_detail;
  check_keys(j, {"thickness", "range", "blanking"}, where);
  SimulationOptions o;
  read(j, "thickness", o.render.thickness, where);
  read(j, "range", o.render.range, where);
  if (j.contains("blanking")) {
    for (const auto& b : j.at("blanking")) {
      check_keys(b, {"camera", "first", "last"}, where + ".blanking");
      MaskBlanking mb;
      read(b, "camera", mb.camera, where + ".blanking");
      read(b, "first", mb.first, where + ".blanking");
      read(b, "last", mb.last, where + ".blanking");
      if (mb.last < mb.first) throw Error(ErrorKind::kConfig, where + ".blanking: last < first");
      o.blanking.push_back(mb);
    }
  }
  return o;
}

inline GridSpec parse_grid(const Json& j, const std::string& where) {
  using namespace config_detail;
  check_keys(j, {"lateral", "longitudinal", "yaw_deg"}, where);
  GridSpec g;
  auto axis = [&](const char* key, GridAxisKind kind, bool degrees) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    const std::string w = where + "." + key;
    check_keys(a, {"range", "step"}, w);
    GridAxis ax{kind, 0.0, 1.0};
    read(a, "range", ax.range, w);
    read(a, "step", ax.step, w);
    if (degrees) {
      ax.range = deg2rad(ax.range);
      ax.step = deg2rad(ax.step);
    }
    g.axes.push_back(ax);
  };
  axis("lateral", GridAxisKind::kLateral, false);
  axis("longitudinal", GridAxisKind::kLongitudinal, false);
  axis("yaw_deg", GridAxisKind::kYaw, true);
  try {
    g.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, where + ": " + e.what());
  }
  return g;
}

inline void parse_localizer(const Json& root, LocalizerConfig& cfg) {
  using namespace config_detail;
  if (root.contains("grid")) cfg.init.grid = parse_grid(root.at("grid"), "grid");
  if (root.contains("initializer")) {
    const auto& j = root.at("initializer");
    check_keys(j, {"min_separation", "z_lookup_radius", "min_visible", "threads", "gps_history", "sample_interval",
                   "crop_range", "crop_forward_offset", "budget_frames"},
               "initializer");
    read(j, "min_separation", cfg.init.min_separation, "initializer");
    read(j, "z_lookup_radius", cfg.init.z_lookup_radius, "initializer");
    read(j, "min_visible", cfg.init.min_visible, "initializer");
    read(j, "threads", cfg.init.threads, "initializer");
    read(j, "gps_history", cfg.gps_history, "initializer");
    read(j, "sample_interval", cfg.init_crop.interval, "initializer");
    read(j, "crop_range", cfg.init_crop.range, "initializer");
    read(j, "crop_forward_offset", cfg.init_crop.forward_offset, "initializer");
    read(j, "budget_frames", cfg.init_budget, "initializer");
  }
  if (root.contains("crop")) {
    const auto& j = root.at("crop");
    check_keys(j, {"range", "forward_offset", "interval"}, "crop");
    read(j, "range", cfg.crop.range, "crop");
    read(j, "forward_offset", cfg.crop.forward_offset, "crop");
    read(j, "interval", cfg.crop.interval, "crop");
  }
  if (root.contains("costmap")) {
    const auto& j = root.at("costmap");
    check_keys(j, {"method", "plateau_dilate", "ramp_width", "truncation", "erode_radius"}, "costmap");
    std::string method = "morphology";
    read(j, "method", method, "costmap");
    if (method == "morphology") {
      cfg.costmap.method = CostMapMethod::kMorphology;
    } else if (method == "distance_transform") {
      cfg.costmap.method = CostMapMethod::kDistanceTransform;
    } else {
      throw Error(ErrorKind::kConfig, "costmap.method: expected morphology or distance_transform");
    }
    read(j, "plateau_dilate", cfg.costmap.plateau_dilate, "costmap");
    read(j, "ramp_width", cfg.costmap.ramp_width, "costmap");
    read(j, "truncation", cfg.costmap.truncation, "costmap");
    read(j, "erode_radius", cfg.costmap.erode_radius, "costmap");
  }
  if (root.contains("tracker")) {
    const auto& j = root.at("tracker");
    auto& t = cfg.tracker;
    check_keys(j, {"huber_delta", "outlier_cutoff", "max_lm_iterations", "lm_initial_lambda", "min_vertical_samples",
                   "parallel_angle_threshold_deg", "curvature_threshold", "roll_range_deg", "roll_step_deg",
                   "confidence_success", "longitudinal_correction", "roll_refine", "occlusion_fraction"},
               "tracker");
    read(j, "huber_delta", t.huber_delta, "tracker");
    read(j, "outlier_cutoff", t.outlier_cutoff, "tracker");
    read(j, "max_lm_iterations", t.max_lm_iterations, "tracker");
    read(j, "lm_initial_lambda", t.lm_initial_lambda, "tracker");
    read(j, "min_vertical_samples", t.min_vertical_samples, "tracker");
    read_deg(j, "parallel_angle_threshold_deg", t.parallel_angle_threshold, "tracker");
    read(j, "curvature_threshold", t.curvature_threshold, "tracker");
    read_deg(j, "roll_range_deg", t.roll_range, "tracker");
    read_deg(j, "roll_step_deg", t.roll_step, "tracker");
    read(j, "confidence_success", t.confidence_success, "tracker");
    read(j, "longitudinal_correction", cfg.longitudinal_correction, "tracker");
    read(j, "roll_refine", cfg.roll_refine, "tracker");
    read(j, "occlusion_fraction", cfg.occlusion_fraction, "tracker");
  }
  if (root.contains("graph")) {
    const auto& j = root.at("graph");
    auto& g = cfg.graph;
    check_keys(j, {"window_capacity", "lambda", "stationary_threshold", "max_failures", "max_occluded",
                   "max_iterations", "unconstrained_longitudinal_weight"},
               "graph");
    read(j, "window_capacity", g.window_capacity, "graph");
    read(j, "lambda", g.lambda, "graph");
    read(j, "stationary_threshold", g.stationary_threshold, "graph");
    read(j, "max_failures", g.max_failures, "graph");
    read(j, "max_occluded", g.max_occluded, "graph");
    read(j, "max_iterations", g.max_iterations, "graph");
    read(j, "unconstrained_longitudinal_weight", g.unconstrained_longitudinal_weight, "graph");
  }
  cfg.validate();
}

/// Inputs of `semloc gen`: a world to synthesize and how to observe it.
struct WorldConfig {
  WorldSpec world;
  std::vector<CameraModel> cameras;
  SensorNoiseSpec noise;
  std::uint64_t seed = 1;
  SimulationOptions simulation;
};

/// Inputs of `semloc run` / `semloc init-rate`. Either `sequence` names a
/// directory written by `semloc gen`, or `world` is simulated in memory.
struct RunConfig {
  std::filesystem::path sequence;
  std::optional<WorldConfig> world;
  std::optional<std::filesystem::path> map;
  std::optional<std::vector<CameraModel>> cameras;
  LocalizerConfig localizer;
  int rpe_interval = 5;
  std::filesystem::path output = "semloc_out";
  std::size_t init_rate_budget = 10;
  std::size_t init_rate_stride = 1;
};

inline Json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open config " + path.string());
  try {
    return Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
}

inline WorldConfig parse_world_config(const Json& root) {
  using namespace config_detail;
  check_keys(root, {"world", "cameras", "noise", "seed", "simulation"}, "world config");
  WorldConfig c;
  if (root.contains("world")) c.world = parse_world(root.at("world"), "world");
  if (!root.contains("cameras")) throw Error(ErrorKind::kConfig, "world config: 'cameras' is required");
  c.cameras = parse_cameras(root.at("cameras"), "cameras");
  if (root.contains("noise")) c.noise = parse_noise(root.at("noise"), "noise");
  read(root, "seed", c.seed, "world config");
  if (root.contains("simulation")) c.simulation = parse_simulation(root.at("simulation"), "simulation");
  return c;
}

/// Relative paths resolve against `base_dir` (the config file's directory).
inline RunConfig parse_run_config(const Json& root, const std::filesystem::path& base_dir) {
  using namespace config_detail;
  check_keys(root, {"sequence", "map", "cameras", "world", "noise", "seed", "simulation", "grid", "initializer",
                    "crop", "costmap", "tracker", "graph", "rpe_interval", "output", "init_rate"},
             "run config");
  RunConfig c;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  if (root.contains("sequence") == root.contains("world")) {
    throw Error(ErrorKind::kConfig, "run config: exactly one of 'sequence' or 'world' is required");
  }
  if (root.contains("sequence")) {
    std::string s;
    read(root, "sequence", s, "run config");
    c.sequence = resolve(s);
  } else {
    Json w = Json::object();
    for (const char* key : {"world", "cameras", "noise", "seed", "simulation"}) {
      if (root.contains(key)) w[key] = root.at(key);
    }
    c.world = parse_world_config(w);
  }
  if (root.contains("map")) {
    std::string m;
    read(root, "map", m, "run config");
    c.map = resolve(m);
  }
  if (root.contains("cameras") && !c.world) c.cameras = parse_cameras(root.at("cameras"), "cameras");
  parse_localizer(root, c.localizer);
  read(root, "rpe_interval", c.rpe_interval, "run config");
  if (c.rpe_interval < 1) throw Error(ErrorKind::kConfig, "rpe_interval must be >= 1");
  if (root.contains("output")) {
    std::string o;
    read(root, "output", o, "run config");
    c.output = resolve(o);
  } else {
    c.output = base_dir / c.output;
  }
  if (root.contains("init_rate")) {
    const auto& j = root.at("init_rate");
    check_keys(j, {"budget", "stride"}, "init_rate");
    read(j, "budget", c.init_rate_budget, "init_rate");
    read(j, "stride", c.init_rate_stride, "init_rate");
  }
  return c;
}

}  // namespace semloc

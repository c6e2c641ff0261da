#pragma once

// Trajectory files and relative pose error with a lateral / longitudinal split.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "semloc/errors.hpp"
#include "semloc/geometry.hpp"

namespace semloc {

struct Trajectory {
  std::vector<double> timestamps;
  std::vector<Pose> poses;

  std::size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }

  void push_back(double t, const Pose& p) {
    if (!timestamps.empty() && !(t > timestamps.back())) {
      throw Error(ErrorKind::kValidation, "trajectory timestamps must strictly increase");
    }
    timestamps.push_back(t);
    poses.push_back(p);
  }
};

/// `timestamp tx ty tz qx qy qz qw`, one pose per line, '#' comments allowed.
inline Trajectory parse_trajectory(std::istream& in, const std::string& source = "<stream>") {
  Trajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw Error(ErrorKind::kParse, source + ":" + std::to_string(lineno) + ": expected 8 numbers");
    }
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (std::abs(q.norm() - 1.0) > 1e-6) {
      throw Error(ErrorKind::kParse, source + ":" + std::to_string(lineno) + ": quaternion is not unit length");
    }
    try {
      traj.push_back(t, Pose::from_quaternion(q, Vec3(tx, ty, tz)));
    } catch (const Error& e) {
      throw Error(ErrorKind::kParse, source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return traj;
}

inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return parse_trajectory(in, path);
}

inline void write_pose_line(std::ostream& out, double t, const Pose& p) {
  const auto q = p.quaternion();
  char buf[512];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", t, p.translation.x(),
                p.translation.y(), p.translation.z(), q.x(), q.y(), q.z(), q.w());
  out << buf;
}

inline void write_trajectory(std::ostream& out, const Trajectory& traj) {
  for (std::size_t i = 0; i < traj.size(); ++i) write_pose_line(out, traj.timestamps[i], traj.poses[i]);
}

inline void save_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  write_trajectory(out, traj);
}

struct Association {
  std::size_t estimate = 0;
  std::size_t reference = 0;
};

/// For every reference stamp, the nearest estimate stamp if within `tolerance`.
inline std::vector<Association> associate(const Trajectory& estimate, const Trajectory& reference,
                                          double tolerance = 0.05) {
  std::vector<Association> out;
  if (estimate.empty()) return out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = reference.timestamps[i];
    while (j + 1 < estimate.size() && std::abs(estimate.timestamps[j + 1] - t) <= std::abs(estimate.timestamps[j] - t)) {
      ++j;
    }
    if (std::abs(estimate.timestamps[j] - t) <= tolerance) {
      if (!out.empty() && out.back().estimate == j) continue;
      out.push_back({j, i});
    }
  }
  return out;
}

struct RpePair {
  double timestamp = 0.0;  // reference time of the first pose
  double translation = 0.0;
  double lateral = 0.0;
  double longitudinal = 0.0;
  double rotation_deg = 0.0;
};

struct RpeReport {
  int interval = 5;
  std::vector<RpePair> pairs;
  double max_translation = 0.0;
  double mean_translation = 0.0;
  double median_translation = 0.0;
  double mean_lateral = 0.0;
  double mean_longitudinal = 0.0;
  double mean_rotation_deg = 0.0;

  void recompute() {
    max_translation = mean_translation = median_translation = 0.0;
    mean_lateral = mean_longitudinal = mean_rotation_deg = 0.0;
    if (pairs.empty()) return;
    std::vector<double> t;
    for (const auto& p : pairs) {
      t.push_back(p.translation);
      mean_translation += p.translation;
      mean_lateral += p.lateral;
      mean_longitudinal += p.longitudinal;
      mean_rotation_deg += p.rotation_deg;
    }
    const auto n = static_cast<double>(pairs.size());
    mean_translation /= n;
    mean_lateral /= n;
    mean_longitudinal /= n;
    mean_rotation_deg /= n;
    max_translation = *std::max_element(t.begin(), t.end());
    std::sort(t.begin(), t.end());
    const std::size_t m = t.size() / 2;
    median_translation = t.size() % 2 ? t[m] : 0.5 * (t[m - 1] + t[m]);
  }
};

/// Error of one relative motion. The translation error is expressed in the
/// reference body frame at the first pose: x longitudinal, y lateral.
inline RpePair relative_error(const Pose& P_i, const Pose& P_j, const Pose& Q_i, const Pose& Q_j) {
  const Pose dP = P_i.inverse() * P_j;
  const Pose dQ = Q_i.inverse() * Q_j;
  const Pose E = dQ.inverse() * dP;
  const Vec3 e = dQ.rotation * E.translation;
  RpePair r;
  r.translation = e.norm();
  r.longitudinal = std::abs(e.x());
  r.lateral = std::abs(e.y());
  r.rotation_deg = rad2deg(so3_log(E.rotation).norm());
  return r;
}

/// Pairs are formed over the associated sequence, `interval` entries apart.
inline RpeReport compute_rpe(const Trajectory& estimate, const Trajectory& reference, int interval = 5,
                             double tolerance = 0.05) {
  if (interval < 1) throw Error(ErrorKind::kValidation, "RPE interval must be >= 1");
  const auto assoc = associate(estimate, reference, tolerance);
  if (assoc.size() <= static_cast<std::size_t>(interval)) {
    throw Error(ErrorKind::kNoAssociations, "only " + std::to_string(assoc.size()) +
                                                " associated poses, need more than " + std::to_string(interval));
  }
  RpeReport rep;
  rep.interval = interval;
  for (std::size_t i = 0; i + static_cast<std::size_t>(interval) < assoc.size(); ++i) {
    const auto& a = assoc[i];
    const auto& b = assoc[i + static_cast<std::size_t>(interval)];
    RpePair p = relative_error(estimate.poses[a.estimate], estimate.poses[b.estimate], reference.poses[a.reference],
                               reference.poses[b.reference]);
    p.timestamp = reference.timestamps[a.reference];
    rep.pairs.push_back(p);
  }
  rep.recompute();
  return rep;
}

inline constexpr const char* kRpeCsvHeader = "timestamp,translation_m,lateral_m,longitudinal_m,rotation_deg";

inline void write_rpe_csv(std::ostream& out, const RpeReport& rep) {
  out << kRpeCsvHeader << '\n';
  char buf[256];
  for (const auto& p : rep.pairs) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", p.timestamp, p.translation, p.lateral,
                  p.longitudinal, p.rotation_deg);
    out << buf;
  }
}

inline std::vector<RpePair> parse_rpe_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kRpeCsvHeader) throw Error(ErrorKind::kParse, "missing RPE CSV header");
  std::vector<RpePair> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    RpePair p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &p.timestamp, &p.translation, &p.lateral, &p.longitudinal,
                    &p.rotation_deg) != 5) {
      throw Error(ErrorKind::kParse, "RPE CSV line " + std::to_string(lineno) + ": expected 5 fields");
    }
    out.push_back(p);
  }
  return out;
}

/// Table-style block: 3D translation max/mean/median, 2D lateral/longitudinal, rotation mean.
inline void write_rpe_summary(std::ostream& out, const RpeReport& rep, const std::string& label = "sequence") {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "# RPE, frame interval %d, %zu pairs\n"
                "%-12s %10s %10s %10s %10s %12s %10s\n"
                "%-12s %10.4f %10.4f %10.4f %10.4f %12.4f %10.4f\n",
                rep.interval, rep.pairs.size(), "", "max(m)", "mean(m)", "median(m)", "lateral(m)",
                "longitud.(m)", "rot(deg)", label.c_str(), rep.max_translation, rep.mean_translation,
                rep.median_translation, rep.mean_lateral, rep.mean_longitudinal, rep.mean_rotation_deg);
  out << buf;
}

}  // namespace semloc

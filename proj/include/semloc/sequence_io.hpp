#pragma once

// On-disk sequences:
//   <dir>/sequence.txt            header, camera list, frame count
//   <dir>/map.hdmap               vector map
//   <dir>/sensors.txt             one SensorRecord per line
//   <dir>/groundtruth.txt         reference trajectory
//   <dir>/masks/frame_NNNNNN_camK.rle

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "semloc/errors.hpp"
#include "semloc/evaluation.hpp"
#include "semloc/geometry.hpp"
#include "semloc/hdmap.hpp"
#include "semloc/simworld.hpp"

namespace semloc {

inline constexpr std::string_view kMaskMagic = "semloc-mask";
inline constexpr std::string_view kSequenceMagic = "semloc-sequence";

/// Run-length encoding of the three class masks of one camera:
///   semloc-mask 1 W H
///   <class> <nruns> start len start len ...
inline void write_masks_rle(std::ostream& out, const CameraMasks& masks) {
  const int W = masks[0].width, H = masks[0].height;
  out << kMaskMagic << " 1 " << W << ' ' << H << '\n';
  for (const auto& m : masks) {
    std::vector<std::pair<std::size_t, std::size_t>> runs;
    for (std::size_t i = 0; i < m.data.size();) {
      if (!m.data[i]) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < m.data.size() && m.data[j]) ++j;
      runs.emplace_back(i, j - i);
      i = j;
    }
    out << class_name(m.cls) << ' ' << runs.size();
    for (const auto& [s, n] : runs) out << ' ' << s << ' ' << n;
    out << '\n';
  }
}

inline CameraMasks parse_masks_rle(std::istream& in, const std::string& source = "<stream>") {
  auto fail = [&](const std::string& what) { return Error(ErrorKind::kParse, source + ": " + what); };
  std::string magic;
  int version = 0, W = 0, H = 0;
  if (!(in >> magic >> version >> W >> H) || magic != kMaskMagic || version != 1 || W <= 0 || H <= 0) {
    throw fail("bad mask header");
  }
  CameraMasks masks{SegMask(W, H, LandmarkClass::kLaneMarking), SegMask(W, H, LandmarkClass::kPole),
                    SegMask(W, H, LandmarkClass::kSignboard)};
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    std::string name;
    std::size_t nruns = 0;
    if (!(in >> name >> nruns)) throw fail("missing class line");
    const auto cls = parse_class(name);
    if (!cls) throw fail("unknown class '" + name + "'");
    SegMask& m = masks[class_index(*cls)];
    for (std::size_t r = 0; r < nruns; ++r) {
      std::size_t s = 0, n = 0;
      if (!(in >> s >> n)) throw fail("truncated run list");
      if (s + n > m.data.size()) throw fail("run outside the image");
      std::fill_n(m.data.begin() + static_cast<std::ptrdiff_t>(s), n, std::uint8_t{1});
    }
  }
  return masks;
}

inline std::string mask_file_name(std::size_t frame, std::size_t camera) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%06zu_cam%zu.rle", frame, camera);
  return buf;
}

inline void write_camera_line(std::ostream& out, const CameraModel& c) {
  const auto q = c.extrinsic_bc.quaternion();
  const auto& t = c.extrinsic_bc.translation;
  char buf[512];
  std::snprintf(buf, sizeof buf, "camera %.17g %.17g %.17g %.17g %d %d %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                c.fx, c.fy, c.cx, c.cy, c.width, c.height, t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
  out << buf;
}

/// index timestamp odom(tx ty tz qx qy qz qw) gps_x gps_y gps_valid gt(tx ty tz qx qy qz qw)
inline void write_sensor_line(std::ostream& out, const SensorRecord& r) {
  const auto qo = r.odometry.quaternion();
  const auto qg = r.ground_truth.quaternion();
  const auto& to = r.odometry.translation;
  const auto& tg = r.ground_truth.translation;
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "%zu %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %d %.17g %.17g %.17g %.17g %.17g "
                "%.17g %.17g\n",
                r.index, r.timestamp, to.x(), to.y(), to.z(), qo.x(), qo.y(), qo.z(), qo.w(), r.gps.x(), r.gps.y(),
                r.gps_valid ? 1 : 0, tg.x(), tg.y(), tg.z(), qg.x(), qg.y(), qg.z(), qg.w());
  out << buf;
}

inline SensorRecord parse_sensor_line(const std::string& line, const std::string& where) {
  std::istringstream ls(line);
  SensorRecord r;
  double v[7], g[7];
  int valid = 0;
  if (!(ls >> r.index >> r.timestamp >> v[0] >> v[1] >> v[2] >> v[3] >> v[4] >> v[5] >> v[6] >> r.gps.x() >>
        r.gps.y() >> valid >> g[0] >> g[1] >> g[2] >> g[3] >> g[4] >> g[5] >> g[6])) {
    throw Error(ErrorKind::kParse, where + ": expected 19 fields");
  }
  r.gps_valid = valid != 0;
  r.odometry = Pose::from_quaternion(Eigen::Quaterniond(v[6], v[3], v[4], v[5]), Vec3(v[0], v[1], v[2]));
  r.ground_truth = Pose::from_quaternion(Eigen::Quaterniond(g[6], g[3], g[4], g[5]), Vec3(g[0], g[1], g[2]));
  return r;
}

/// Writes every frame of `source`, rendering masks one frame at a time.
inline void write_sequence(const std::filesystem::path& dir, const HdMap& map, const std::vector<CameraModel>& cameras,
                           const FrameSource& source) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "masks", ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + (dir / "masks").string() + ": " + ec.message());
  save_map((dir / "map.hdmap").string(), map);

  auto open = [](const fs::path& p) {
    std::ofstream out(p);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + p.string());
    return out;
  };
  {
    auto out = open(dir / "sequence.txt");
    out << kSequenceMagic << " 1\n";
    out << "cameras " << cameras.size() << '\n';
    for (const auto& c : cameras) write_camera_line(out, c);
    out << "frames " << source.size() << '\n';
  }
  auto sensors = open(dir / "sensors.txt");
  sensors << "# index timestamp odom_tx odom_ty odom_tz odom_qx odom_qy odom_qz odom_qw gps_x gps_y gps_valid "
             "gt_tx gt_ty gt_tz gt_qx gt_qy gt_qz gt_qw\n";
  auto gt = open(dir / "groundtruth.txt");
  for (std::size_t k = 0; k < source.size(); ++k) {
    const FrameBundle f = source.frame(k);
    write_sensor_line(sensors, f.sensors);
    write_pose_line(gt, f.sensors.timestamp, f.sensors.ground_truth);
    for (std::size_t c = 0; c < f.masks.size(); ++c) {
      auto out = open(dir / "masks" / mask_file_name(k, c));
      write_masks_rle(out, f.masks[c]);
    }
  }
}

struct Sequence {
  std::shared_ptr<const HdMap> map;
  std::vector<CameraModel> cameras;
  FrameSource source;
};

inline Sequence load_sequence(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path header = dir / "sequence.txt";
  if (!fs::is_regular_file(header)) throw Error(ErrorKind::kSequenceNotFound, "no sequence at " + dir.string());

  Sequence seq;
  std::ifstream in(header);
  const std::string where = header.string();
  std::string word;
  int version = 0;
  std::size_t ncam = 0, frames = 0;
  if (!(in >> word >> version) || word != kSequenceMagic || version != 1) {
    throw Error(ErrorKind::kParse, where + ": bad header");
  }
  if (!(in >> word >> ncam) || word != "cameras" || ncam == 0) throw Error(ErrorKind::kParse, where + ": bad camera count");
  for (std::size_t c = 0; c < ncam; ++c) {
    CameraModel cam;
    double t[3], q[4];
    if (!(in >> word >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.width >> cam.height >> t[0] >> t[1] >> t[2] >>
          q[0] >> q[1] >> q[2] >> q[3]) ||
        word != "camera") {
      throw Error(ErrorKind::kParse, where + ": bad camera line " + std::to_string(c + 1));
    }
    cam.extrinsic_bc = Pose::from_quaternion(Eigen::Quaterniond(q[3], q[0], q[1], q[2]), Vec3(t[0], t[1], t[2]));
    cam.validate();
    seq.cameras.push_back(cam);
  }
  if (!(in >> word >> frames) || word != "frames") throw Error(ErrorKind::kParse, where + ": missing frame count");

  const fs::path map_path = dir / "map.hdmap";
  if (!fs::is_regular_file(map_path)) throw Error(ErrorKind::kSequenceNotFound, "missing " + map_path.string());
  seq.map = std::make_shared<const HdMap>(load_map(map_path.string()));

  const fs::path sensor_path = dir / "sensors.txt";
  std::ifstream sin(sensor_path);
  if (!sin) throw Error(ErrorKind::kSequenceNotFound, "missing " + sensor_path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(sin, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    seq.source.records.push_back(parse_sensor_line(line, sensor_path.string() + ":" + std::to_string(lineno)));
  }
  if (seq.source.records.size() != frames) {
    throw Error(ErrorKind::kParse, sensor_path.string() + ": " + std::to_string(seq.source.records.size()) +
                                       " records, header says " + std::to_string(frames));
  }
  for (std::size_t k = 0; k < frames; ++k) {
    if (seq.source.records[k].index != k) throw Error(ErrorKind::kParse, sensor_path.string() + ": frame indices must be 0..N-1");
  }

  seq.source.masks = [mask_dir = dir / "masks", cameras = seq.cameras](std::size_t k) {
    FrameMasks out;
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      const fs::path p = mask_dir / mask_file_name(k, c);
      std::ifstream min(p);
      if (!min) throw Error(ErrorKind::kSequenceNotFound, "missing " + p.string());
      auto masks = parse_masks_rle(min, p.string());
      if (masks[0].width != cameras[c].width || masks[0].height != cameras[c].height) {
        throw Error(ErrorKind::kParse, p.string() + ": mask size does not match camera " + std::to_string(c));
      }
      out.push_back(std::move(masks));
    }
    return out;
  };
  return seq;
}

}  // namespace semloc

#pragma once

// Vector map of typed 3D polylines, a k-d tree over landmark centroids, and
// fixed-interval sampling of the landmarks near a vehicle pose.
//
// Map file format (plain text, '#' starts a comment):
//
//   semloc-hdmap 1
//   landmark <id> <class> <n> x1 y1 z1 ... xn yn zn
//
// with <class> one of lane_marking, pole, signboard. Signboard polylines are
// closed boundaries; the closing edge from the last point back to the first
// is implicit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "semloc/errors.hpp"
#include "semloc/geometry.hpp"

namespace semloc {

enum class LandmarkClass : std::uint8_t { kLaneMarking = 0, kPole = 1, kSignboard = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<LandmarkClass, kNumClasses> kAllClasses = {
    LandmarkClass::kLaneMarking, LandmarkClass::kPole, LandmarkClass::kSignboard};

inline std::size_t class_index(LandmarkClass c) { return static_cast<std::size_t>(c); }

inline std::string_view class_name(LandmarkClass c) {
  switch (c) {
    case LandmarkClass::kLaneMarking: return "lane_marking";
    case LandmarkClass::kPole: return "pole";
    case LandmarkClass::kSignboard: return "signboard";
  }
  return "unknown";
}

inline std::optional<LandmarkClass> parse_class(std::string_view name) {
  for (auto c : kAllClasses) {
    if (class_name(c) == name) return c;
  }
  return std::nullopt;
}

struct Landmark {
  std::int64_t id = 0;
  LandmarkClass cls = LandmarkClass::kLaneMarking;
  std::vector<Vec3> points;

  bool closed() const { return cls == LandmarkClass::kSignboard; }

  std::size_t segment_count() const {
    if (points.size() < 2) return 0;
    return closed() ? points.size() : points.size() - 1;
  }

  std::pair<Vec3, Vec3> segment(std::size_t i) const {
    return {points[i], points[(i + 1) % points.size()]};
  }

  void validate() const {
    const std::size_t min_points = closed() ? 3 : 2;
    if (points.size() < min_points) {
      throw Error(ErrorKind::kValidation, "landmark " + std::to_string(id) + " has " +
                                              std::to_string(points.size()) + " points, needs " +
                                              std::to_string(min_points));
    }
    for (std::size_t i = 0; i < segment_count(); ++i) {
      const auto [a, b] = segment(i);
      if ((b - a).norm() <= 1e-6) {
        throw Error(ErrorKind::kValidation,
                    "landmark " + std::to_string(id) + " has coincident consecutive points at index " +
                        std::to_string(i));
      }
    }
  }
};

inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (a + t * ab - p).norm();
}

/// Minimum Euclidean distance from a point to a landmark polyline.
inline double landmark_distance(const Landmark& lm, const Vec3& p) {
  if (lm.points.size() == 1) return (lm.points.front() - p).norm();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lm.segment_count(); ++i) {
    const auto [a, b] = lm.segment(i);
    best = std::min(best, point_segment_distance(p, a, b));
  }
  return best;
}

struct SampledPoint {
  Vec3 position = Vec3::Zero();
  LandmarkClass cls = LandmarkClass::kLaneMarking;
  std::int64_t source_id = 0;
  double arclength = 0.0;
};

/// Samples every segment at equal spacing no larger than `interval`. Vertices
/// are always kept, so resampling the output reproduces it.
inline std::vector<SampledPoint> sample_polyline(const Landmark& lm, double interval) {
  if (!(interval > 0.0)) throw Error(ErrorKind::kValidation, "sampling interval must be positive");
  std::vector<SampledPoint> out;
  if (lm.points.empty()) return out;
  out.push_back({lm.points.front(), lm.cls, lm.id, 0.0});
  double s0 = 0.0;
  const std::size_t nseg = lm.segment_count();
  for (std::size_t i = 0; i < nseg; ++i) {
    const auto [a, b] = lm.segment(i);
    const double len = (b - a).norm();
    const auto pieces = static_cast<std::size_t>(std::max(1.0, std::ceil(len / interval - 1e-9)));
    const bool closing = lm.closed() && i + 1 == nseg;
    for (std::size_t j = 1; j <= pieces; ++j) {
      if (closing && j == pieces) break;  // back at the first point
      const double t = static_cast<double>(j) / static_cast<double>(pieces);
      const Vec3 p = j == pieces ? b : Vec3(a + t * (b - a));
      out.push_back({p, lm.cls, lm.id, s0 + t * len});
    }
    s0 += len;
  }
  return out;
}

/// Static k-d tree over landmark centroids. Each node remembers the largest
/// centroid-to-point radius in its subtree so radius queries against whole
/// polylines can prune safely.
class LandmarkIndex {
 public:
  LandmarkIndex() = default;

  explicit LandmarkIndex(const std::vector<Landmark>& landmarks) {
    const std::size_t n = landmarks.size();
    centroids_.resize(n);
    radii_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 c = Vec3::Zero();
      for (const auto& p : landmarks[i].points) c += p;
      c /= static_cast<double>(std::max<std::size_t>(1, landmarks[i].points.size()));
      double r = 0.0;
      for (const auto& p : landmarks[i].points) r = std::max(r, (p - c).norm());
      centroids_[i] = c;
      radii_[i] = r;
    }
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    if (n > 0) root_ = build(0, n, 0);
  }

  /// Landmark indices whose polyline may lie within `radius` of `center`.
  /// Callers refine with an exact distance test.
  template <typename Visit>
  void candidates(const Vec3& center, double radius, Visit&& visit) const {
    if (root_ < 0) return;
    search(root_, center, radius, visit);
  }

 private:
  struct Node {
    std::size_t begin = 0;
    std::size_t end = 0;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    double max_radius = 0.0;
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Zero();
    int left = -1;
    int right = -1;
  };

  static constexpr std::size_t kLeafSize = 8;

  int build(std::size_t begin, std::size_t end, int depth) {
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    for (std::size_t i = begin; i < end; ++i) {
      node.lo = node.lo.cwiseMin(centroids_[order_[i]]);
      node.hi = node.hi.cwiseMax(centroids_[order_[i]]);
      node.max_radius = std::max(node.max_radius, radii_[order_[i]]);
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) return id;

    int axis = 0;
    (node.hi - node.lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return centroids_[a][axis] < centroids_[b][axis]; });
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    nodes_[id].axis = axis;
    nodes_[id].split = centroids_[order_[mid]][axis];
    nodes_[id].left = left;
    nodes_[id].right = right;
    (void)depth;
    return id;
  }

  template <typename Visit>
  void search(int id, const Vec3& c, double radius, Visit& visit) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    // distance from the query to the centroid bounding box
    const Vec3 gap = (node.lo - c).cwiseMax(c - node.hi).cwiseMax(0.0);
    if (gap.norm() > radius + node.max_radius) return;
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t k = order_[i];
        if ((centroids_[k] - c).norm() <= radius + radii_[k]) visit(k);
      }
      return;
    }
    search(node.left, c, radius, visit);
    search(node.right, c, radius, visit);
  }

  std::vector<Vec3> centroids_;
  std::vector<double> radii_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Immutable vector map.
class HdMap {
 public:
  HdMap() = default;

  explicit HdMap(std::vector<Landmark> landmarks) : landmarks_(std::move(landmarks)) {
    for (const auto& lm : landmarks_) lm.validate();
    index_ = LandmarkIndex(landmarks_);
  }

  const std::vector<Landmark>& landmarks() const { return landmarks_; }
  std::size_t size() const { return landmarks_.size(); }
  bool empty() const { return landmarks_.empty(); }

  /// Landmarks whose minimum distance to `center` is at most `radius`, in
  /// storage order.
  std::vector<const Landmark*> query_radius(const Vec3& center, double radius) const {
    if (!(radius > 0.0)) throw Error(ErrorKind::kValidation, "query radius must be positive");
    std::vector<std::size_t> hits;
    index_.candidates(center, radius, [&](std::size_t k) {
      if (landmark_distance(landmarks_[k], center) <= radius) hits.push_back(k);
    });
    std::sort(hits.begin(), hits.end());
    std::vector<const Landmark*> out;
    out.reserve(hits.size());
    for (auto k : hits) out.push_back(&landmarks_[k]);
    return out;
  }

 private:
  std::vector<Landmark> landmarks_;
  LandmarkIndex index_;
};

inline constexpr std::string_view kMapMagic = "semloc-hdmap";
inline constexpr int kMapVersion = 1;

inline HdMap parse_map(std::istream& in, const std::string& source = "<stream>") {
  std::vector<Landmark> landmarks;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorKind::kParse, source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (!header_seen) {
      int version = 0;
      if (tag != kMapMagic || !(ls >> version)) fail("missing '" + std::string(kMapMagic) + " <version>' header");
      if (version != kMapVersion) fail("unsupported map version " + std::to_string(version));
      header_seen = true;
      continue;
    }
    if (tag != "landmark") fail("unknown record '" + tag + "'");
    Landmark lm;
    std::string cls;
    long long n = 0;
    if (!(ls >> lm.id >> cls >> n)) fail("malformed landmark record");
    auto parsed = parse_class(cls);
    if (!parsed) fail("unknown landmark class '" + cls + "'");
    if (n < 0) fail("negative point count");
    lm.cls = *parsed;
    lm.points.resize(static_cast<std::size_t>(n));
    for (auto& p : lm.points) {
      if (!(ls >> p.x() >> p.y() >> p.z())) fail("landmark " + std::to_string(lm.id) + ": expected " + std::to_string(n) + " points");
    }
    std::string extra;
    if (ls >> extra) fail("trailing data after landmark " + std::to_string(lm.id));
    for (const auto& other : landmarks) {
      if (other.id == lm.id) fail("duplicate landmark id " + std::to_string(lm.id));
    }
    landmarks.push_back(std::move(lm));
  }
  if (!header_seen) throw Error(ErrorKind::kParse, source + ": empty map file");
  return HdMap(std::move(landmarks));
}

inline HdMap load_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open map file " + path);
  return parse_map(in, path);
}

inline void write_map(std::ostream& out, const HdMap& map) {
  out << kMapMagic << ' ' << kMapVersion << '\n';
  out << std::setprecision(17);
  for (const auto& lm : map.landmarks()) {
    out << "landmark " << lm.id << ' ' << class_name(lm.cls) << ' ' << lm.points.size();
    for (const auto& p : lm.points) out << ' ' << p.x() << ' ' << p.y() << ' ' << p.z();
    out << '\n';
  }
}

inline void save_map(const std::string& path, const HdMap& map) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write map file " + path);
  write_map(out, map);
}

struct CropConfig {
  double range = 80.0;           // query radius, m
  double forward_offset = 30.0;  // disc center ahead of the vehicle, m
  double interval = 0.5;         // sampling interval, m
};

/// Sampled landmark points near the vehicle, ordered by (class, id, arclength).
inline std::vector<SampledPoint> crop_local_map(const HdMap& map, const Pose& pose_wb, const CropConfig& cfg) {
  if (!(cfg.range > 0.0)) throw Error(ErrorKind::kValidation, "crop range must be positive");
  const Vec3 center = pose_wb * Vec3(cfg.forward_offset, 0.0, 0.0);
  std::vector<SampledPoint> out;
  for (const Landmark* lm : map.query_radius(center, cfg.range)) {
    auto samples = sample_polyline(*lm, cfg.interval);
    out.insert(out.end(), samples.begin(), samples.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const SampledPoint& a, const SampledPoint& b) {
    return std::tie(a.cls, a.source_id, a.arclength) < std::tie(b.cls, b.source_id, b.arclength);
  });
  return out;
}

inline std::vector<SampledPoint> crop_local_map(const HdMap& map, const Pose& pose_wb, double range,
                                                double interval) {
  return crop_local_map(map, pose_wb, CropConfig{range, 0.0, interval});
}

}  // namespace semloc

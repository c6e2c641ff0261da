#include <gtest/gtest.h>

#include <random>

#include "semloc/initializer.hpp"
#include "semloc/simworld.hpp"
#include "semloc/tracker.hpp"
#include "support/test_support.hpp"

namespace semloc {
namespace {

using testing::front_camera;
using testing::highway_spec;
using testing::random_pose;
using testing::rear_camera;
using testing::render_costmaps;
using testing::straight_spec;

double rotation_error_deg(const Pose& a, const Pose& b) {
  return rad2deg(so3_log(a.rotation.transpose() * b.rotation).norm());
}

// (longitudinal, lateral, vertical) error in the reference's frame.
Vec3 body_error(const Pose& est, const Pose& ref) { return ref.rotation.transpose() * (est.translation - ref.translation); }

TEST(PredictPose, Examples) {
  EXPECT_EQ(predict_pose(Pose::identity(), Pose::identity()).matrix(), Eigen::Matrix4d::Identity());
  const Pose p = predict_pose(Pose{rot_z(kPi / 2.0), Vec3(1, 2, 0)}, Pose::from_translation(Vec3(1, 0, 0)));
  EXPECT_LT((p.translation - Vec3(1, 3, 0)).norm(), 1e-12);
}

TEST(PredictPose, ChainMatchesMatrixProduct) {
  std::mt19937_64 rng(50);
  Pose T = random_pose(rng);
  Eigen::Matrix4d M = T.matrix();
  for (int i = 0; i < 100; ++i) {
    const Pose inc = random_pose(rng, 3.0, 0.3);
    T = predict_pose(T, inc);
    M = M * inc.matrix();
  }
  EXPECT_LT((T.matrix() - M).norm() / M.norm(), 1e-12);
}

std::vector<SampledPoint> lane_points(double curvature, bool with_pole) {
  WorldSpec spec;
  spec.segments = {{400.0, curvature}};
  spec.pole_spacing = 0.0;
  spec.frames = 1;
  spec.start_arclength = 100.0;
  if (with_pole) spec.pole_spacing = 50.0;
  const World w = generate_world(spec);
  return crop_local_map(w.map, w.trajectory.front(), CropConfig{});
}

TEST(LongitudinalConstraint, Examples) {
  const TrackerConfig cfg;
  const Pose pose = Pose::from_translation(Vec3(100, -1.875, 0));
  EXPECT_EQ(detect_longitudinal_constraint(lane_points(0.0, false), pose, cfg), LongitudinalConstraint::kUnconstrained);
  EXPECT_EQ(detect_longitudinal_constraint(lane_points(0.0, true), pose, cfg), LongitudinalConstraint::kConstrained);
  auto pts = lane_points(0.0, false);
  pts.push_back({Vec3(120, 5, 2), LandmarkClass::kPole, 999, 0.0});
  EXPECT_EQ(detect_longitudinal_constraint(pts, pose, cfg), LongitudinalConstraint::kConstrained);
}

TEST(LongitudinalConstraint, CurvatureAgainstThreshold) {
  TrackerConfig cfg;
  cfg.curvature_threshold = 1.0 / 500.0;
  // chunked lanes on circles of radius 200 and 2000 (circle oracle: curvature 1/R)
  for (const auto& [radius, want] : {std::pair{200.0, LongitudinalConstraint::kConstrained},
                                     std::pair{2000.0, LongitudinalConstraint::kUnconstrained}}) {
    const auto pts = lane_points(1.0 / radius, false);
    WorldSpec spec;
    spec.segments = {{400.0, 1.0 / radius}};
    const auto c = centerline_at(spec, 100.0);
    const Pose pose{rot_z(c.heading), Vec3(c.position.x(), c.position.y(), 0)};
    EXPECT_EQ(detect_longitudinal_constraint(pts, pose, cfg), want) << "R = " << radius;
  }
}

TEST(LongitudinalConstraint, NonParallelLanes) {
  std::vector<SampledPoint> pts;
  for (double s = 0; s <= 40; s += 0.5) {
    pts.push_back({Vec3(s, -2, 0), LandmarkClass::kLaneMarking, 1, s});
    pts.push_back({Vec3(s, 2 + 0.1 * s, 0), LandmarkClass::kLaneMarking, 2, s});
  }
  EXPECT_EQ(detect_longitudinal_constraint(pts, Pose::identity(), TrackerConfig{}), LongitudinalConstraint::kConstrained);
}

TEST(LongitudinalCorrection, Examples) {
  const Pose p = Pose::from_translation(Vec3(10, 20, 1));
  EXPECT_EQ(longitudinal_correction(p, Vec2(10, 20), true).translation, p.translation);
  const Pose q = longitudinal_correction(p, Vec2(15, 23), true);
  EXPECT_LT((q.translation - Vec3(15, 20, 1)).norm(), 1e-12);
  EXPECT_EQ(longitudinal_correction(p, Vec2(15, 23), false).translation, p.translation);
}

TEST(LongitudinalCorrection, LateralComponentIsZero) {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(-50.0, 50.0), a(-kPi, kPi);
  for (int i = 0; i < 1000; ++i) {
    EulerPose e;
    e.yaw = a(rng);
    e.translation = Vec3(u(rng), u(rng), u(rng));
    const Pose p = e.to_pose();
    const Pose q = longitudinal_correction(p, Vec2(u(rng), u(rng)), true);
    const Vec3 d = p.rotation.transpose() * (q.translation - p.translation);
    EXPECT_NEAR(d.y(), 0.0, 1e-12);
    EXPECT_EQ(q.translation.z(), p.translation.z());
    EXPECT_EQ(q.rotation, p.rotation);
  }
}

TEST(DofMode, Schedules) {
  EXPECT_EQ(select_dof_mode(LongitudinalConstraint::kConstrained).mode, DofMode::kFull6);
  EXPECT_TRUE(select_dof_mode(LongitudinalConstraint::kConstrained).stages.empty());
  const auto d = select_dof_mode(LongitudinalConstraint::kUnconstrained);
  EXPECT_EQ(d.mode, DofMode::kDecoupled);
  ASSERT_EQ(d.stages.size(), 2u);
  EXPECT_EQ(d.stages[0], (std::vector<PoseAxis>{PoseAxis::kPitch, PoseAxis::kYaw, PoseAxis::kTy}));
  EXPECT_EQ(d.stages[1], (std::vector<PoseAxis>{PoseAxis::kPitch, PoseAxis::kTz}));
}

class AlignTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    world_ = new World(generate_world(highway_spec(500)));
    straight_ = new World(generate_world(straight_spec(60)));
  }
  static void TearDownTestSuite() {
    delete world_;
    delete straight_;
  }

  void load(const World& w, std::size_t k, const CostMapParams& params = {}) { load(w, w.trajectory[k], params); }
  void load(const World& w, const Pose& gt, const CostMapParams& params = {}) {
    gt_ = gt;
    costmaps_ = render_costmaps(w.map, cams_, gt_, params);
    points_ = crop_local_map(w.map, gt_, CropConfig{});
  }

  static World* world_;
  static World* straight_;
  std::vector<CameraModel> cams_{front_camera()};
  TrackerConfig cfg_;
  Pose gt_;
  std::vector<CameraCostMaps> costmaps_;
  std::vector<SampledPoint> points_;
};

World* AlignTest::world_ = nullptr;
World* AlignTest::straight_ = nullptr;

TEST_F(AlignTest, AtOptimumStaysPut) {
  load(*world_, 40);
  const auto r = align_photometric(gt_, points_, cams_, costmaps_, cfg_, DofMode::kFull6);
  EXPECT_LE(r.iterations, 2);
  EXPECT_LT((r.pose.translation - gt_.translation).norm(), 1e-3);
  EXPECT_LT(so3_log(gt_.rotation.transpose() * r.pose.rotation).norm(), 1e-4);
  EXPECT_TRUE(r.converged);
  EXPECT_GT(r.confidence, 0.95);
}

TEST_F(AlignTest, RecoversLateralAndYawPerturbation) {
  // Sharp-peaked cost maps: with the default plateau every pose within a few
  // pixels of the true one has zero cost, which caps the attainable precision.
  CostMapParams sharp;
  sharp.plateau_dilate = 0;
  // frames with poles and a signboard ahead
  for (std::size_t k : {35u, 40u, 135u, 240u}) {
    load(*world_, k, sharp);
    ASSERT_EQ(detect_longitudinal_constraint(points_, gt_, cfg_), LongitudinalConstraint::kConstrained);
    const Pose pred = gt_ * Pose{rot_z(deg2rad(1.0)), Vec3(0, 0.5, 0)};
    const auto r = align_photometric(pred, points_, cams_, costmaps_, cfg_, DofMode::kFull6);
    const Vec3 e = body_error(r.pose, gt_);
    EXPECT_LT(std::abs(e.y()), 0.05) << "frame " << k;
    EXPECT_LT(std::abs(e.z()), 0.05) << "frame " << k;
    EXPECT_LT(std::abs(rad2deg(wrap_angle(EulerPose::from_pose(r.pose).yaw - EulerPose::from_pose(gt_).yaw))), 0.1)
        << "frame " << k;
    // Poles at 7 m lateral move ~3 px per metre along the road at 30 m depth,
    // so the longitudinal minimum is shallow and trades against roll/pitch.
    EXPECT_LT(std::abs(e.x()), 0.2) << "frame " << k;
    EXPECT_LT(rotation_error_deg(r.pose, gt_), 0.15) << "frame " << k;
    EXPECT_TRUE(r.converged);
    EXPECT_TRUE(r.monotone);
  }
}

TEST_F(AlignTest, DefaultPlateauStaysWithinItsFlatBand) {
  for (std::size_t k : {35u, 40u, 135u, 240u}) {
    load(*world_, k);
    const Pose pred = gt_ * Pose{rot_z(deg2rad(1.0)), Vec3(0, 0.5, 0)};
    const auto r = align_photometric(pred, points_, cams_, costmaps_, cfg_, DofMode::kFull6);
    EXPECT_LT(std::abs(body_error(r.pose, gt_).y()), 0.1) << "frame " << k;
    EXPECT_LT(rotation_error_deg(r.pose, gt_), 1.5) << "frame " << k;
    EXPECT_LT(evaluate_pose_cost(r.pose, cams_, costmaps_, points_).mean_cost, 0.01);
  }
}

TEST_F(AlignTest, OneMetreLateralReachesLowCost) {
  for (std::size_t k : {10u, 100u, 200u, 300u, 400u}) {
    load(*world_, k);
    const Pose pred = gt_ * Pose::from_translation(Vec3(0, 1.0, 0));
    const auto r = align_photometric(pred, points_, cams_, costmaps_, cfg_, DofMode::kFull6);
    EXPECT_LT(evaluate_pose_cost(r.pose, cams_, costmaps_, points_).mean_cost, 0.05) << "frame " << k;
    EXPECT_LE(r.final_cost, r.initial_cost);
  }
}

TEST_F(AlignTest, DecoupledLeavesRollAndLongitudinalUntouched) {
  CostMapParams sharp;
  sharp.plateau_dilate = 0;
  load(*straight_, 30, sharp);
  ASSERT_EQ(detect_longitudinal_constraint(points_, gt_, cfg_), LongitudinalConstraint::kUnconstrained);
  const Pose pred = gt_ * Pose{rot_z(deg2rad(0.8)), Vec3(2.0, 0.4, 0.1)};
  const auto r = align_photometric(pred, points_, cams_, costmaps_, cfg_, DofMode::kDecoupled);
  const EulerPose before = EulerPose::from_pose(pred);
  EXPECT_EQ(r.dof_mode, DofMode::kDecoupled);
  EXPECT_EQ(r.euler.roll, before.roll);
  EXPECT_EQ(r.heading_translation.x(), (rot_z(before.yaw).transpose() * pred.translation).x());
  // lateral, height, yaw and pitch recovered; the longitudinal offset stays
  const Vec3 e = body_error(r.pose, gt_);
  EXPECT_LT(std::abs(e.y()), 0.05);
  EXPECT_LT(std::abs(e.z()), 0.05);
  EXPECT_NEAR(e.x(), 2.0, 0.05);
  // yaw is solved before height is freed, so it absorbs part of the height error
  EXPECT_LT(std::abs(wrap_angle(EulerPose::from_pose(r.pose).yaw - EulerPose::from_pose(gt_).yaw)), deg2rad(0.2));

  const Pose level = gt_ * Pose{rot_z(deg2rad(0.8)), Vec3(2.0, 0.4, 0.0)};
  const auto q = align_photometric(level, points_, cams_, costmaps_, cfg_, DofMode::kDecoupled);
  EXPECT_LT(std::abs(body_error(q.pose, gt_).y()), 0.05);
  // the 3 px lane masks leave a zero-cost band of about +-0.12 deg in yaw
  EXPECT_LT(std::abs(wrap_angle(EulerPose::from_pose(q.pose).yaw - EulerPose::from_pose(gt_).yaw)), deg2rad(0.15));
  EXPECT_LT(q.final_cost, 0.005);
}

TEST_F(AlignTest, AnalyticGradientMatchesFiniteDifferences) {
  for (std::size_t k : {50u, 250u}) {
    load(*world_, k);
    const Pose pred = gt_ * Pose{rot_z(deg2rad(0.7)), Vec3(0.3, 0.6, 0.05)};
    const detail::AlignInputs in{cams_, costmaps_, points_, cfg_.z_min};
    std::vector<ObservationRef> active;
    const auto T_cw = detail::camera_from_world(pred, cams_);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (detail::eval_obs(in, T_cw, {i, 0}, false).visible) active.push_back({i, 0});
    }
    const detail::Full6Params params{pred};
    Vec6 g = Vec6::Zero();
    for (const auto& o : active) {
      const auto e = detail::eval_obs(in, T_cw, o, true);
      g += (e.dr_dpc * params.dpc(in, o, e.p_c)).transpose() * e.r;
    }
    const double h = 1e-7;
    Vec6 n;
    for (int j = 0; j < 6; ++j) {
      Vec6 d = Vec6::Zero();
      d(j) = h;
      const double fp = detail::objective(in, params.retract(d), active, detail::Kernel::kNone, 1.0);
      const double fm = detail::objective(in, params.retract(-d), active, detail::Kernel::kNone, 1.0);
      n(j) = (fp - fm) / (2.0 * h);
    }
    EXPECT_LT((g - n).norm() / n.norm(), 1e-4) << "frame " << k << "\n" << g.transpose() << "\n" << n.transpose();
  }
}

TEST_F(AlignTest, DecoupledGradientMatchesFiniteDifferences) {
  load(*straight_, 20);
  const Pose pred = gt_ * Pose{rot_z(deg2rad(0.5)) * rot_y(deg2rad(0.3)), Vec3(0, 0.4, 0.1)};
  const detail::AlignInputs in{cams_, costmaps_, points_, cfg_.z_min};
  std::vector<ObservationRef> active;
  const auto T_cw = detail::camera_from_world(pred, cams_);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (detail::eval_obs(in, T_cw, {i, 0}, false).visible) active.push_back({i, 0});
  }
  detail::DecoupledParams p;
  p.euler = EulerPose::from_pose(pred);
  p.heading = p.euler.yaw;
  p.t_heading = rot_z(p.heading).transpose() * pred.translation;
  p.axes = {PoseAxis::kPitch, PoseAxis::kYaw, PoseAxis::kTy, PoseAxis::kTz};
  Eigen::VectorXd g = Eigen::VectorXd::Zero(4);
  for (const auto& o : active) {
    const auto e = detail::eval_obs(in, T_cw, o, true);
    g += (e.dr_dpc * p.dpc(in, o, e.p_c)).transpose() * e.r;
  }
  const double h = 1e-7;
  Eigen::VectorXd n(4);
  for (int j = 0; j < 4; ++j) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(4);
    d(j) = h;
    n(j) = (detail::objective(in, p.retract(d), active, detail::Kernel::kNone, 1.0) -
            detail::objective(in, p.retract(-d), active, detail::Kernel::kNone, 1.0)) /
           (2.0 * h);
  }
  EXPECT_LT((g - n).norm() / n.norm(), 1e-4) << g.transpose() << "\n" << n.transpose();
}

TEST_F(AlignTest, NoVisiblePoints) {
  load(*world_, 40);
  const Pose away = gt_ * Pose{rot_z(kPi), Vec3::Zero()} * Pose::from_translation(Vec3(200, 0, 0));
  EXPECT_THROW(align_photometric(away, points_, cams_, costmaps_, cfg_, DofMode::kFull6), Error);
  EXPECT_THROW(align_photometric(gt_, {}, cams_, costmaps_, cfg_, DofMode::kFull6), Error);
}

TEST_F(AlignTest, RollRefine) {
  EulerPose rolled = EulerPose::from_pose(straight_->trajectory[25]);
  rolled.roll = deg2rad(1.0);
  load(*straight_, rolled.to_pose());
  const Pose flat = straight_->trajectory[25];
  const auto r = rotation_brute_refine(flat, points_, cams_, costmaps_, cfg_);
  EXPECT_EQ(r.evaluated, 9u);
  EXPECT_LE(std::abs(EulerPose::from_pose(r.pose).roll - deg2rad(1.0)), deg2rad(0.5) + 1e-12);

  load(*straight_, 25);
  const auto same = rotation_brute_refine(gt_, points_, cams_, costmaps_, cfg_);
  EXPECT_EQ(same.roll_offset, 0.0);
  EXPECT_EQ(same.pose.matrix(), gt_.matrix());
}

TEST_F(AlignTest, Confidence) {
  load(*world_, 60);
  std::vector<ObservationRef> all;
  for (std::size_t i = 0; i < points_.size(); ++i) all.push_back({i, 0});
  const auto perfect = align_photometric(gt_, points_, cams_, costmaps_, cfg_, DofMode::kFull6);
  EXPECT_GT(perfect.confidence, 0.95);
  EXPECT_GE(perfect.confidence, cfg_.confidence_success);
  std::vector<CameraCostMaps> zeros(1);
  for (std::size_t k = 0; k < kNumClasses; ++k) zeros[0][k] = CostMap(640, 480, kAllClasses[k]);
  EXPECT_EQ(compute_confidence(gt_, all, cams_, zeros, points_), 0.0);
  EXPECT_EQ(compute_confidence(gt_, {}, cams_, costmaps_, points_), 0.0);
  const auto none = align_photometric(gt_, points_, cams_, zeros, cfg_, DofMode::kFull6);
  EXPECT_EQ(none.confidence, 0.0);
  EXPECT_LT(none.confidence, cfg_.confidence_success);
}

TEST_F(AlignTest, BlankSecondCameraDoesNotMakeFlatOptimumDegenerate) {
  load(*world_, 60);
  std::vector<CameraModel> cams{rear_camera(), front_camera()};
  std::vector<CameraCostMaps> maps(2);
  for (std::size_t k = 0; k < kNumClasses; ++k) maps[0][k] = CostMap(640, 480, kAllClasses[k]);
  maps[1] = costmaps_[0];
  const auto r = align_photometric(gt_, points_, cams, maps, cfg_, DofMode::kFull6);
  EXPECT_FALSE(r.degenerate);
  EXPECT_TRUE(r.converged);

  // nothing but the zero-cost floor: no information
  maps[1] = maps[0];
  const auto none = align_photometric(gt_, points_, cams, maps, cfg_, DofMode::kFull6);
  EXPECT_TRUE(none.degenerate);
  EXPECT_FALSE(none.converged);
}

TEST_F(AlignTest, NoiseFreeSequenceTracksWithinTolerance) {
  const auto& traj = world_->trajectory;
  Pose est = traj.front();
  std::size_t good = 0;
  for (std::size_t k = 1; k < traj.size(); ++k) {
    const Pose odom = traj[k - 1].inverse() * traj[k];
    const Pose pred = predict_pose(est, odom);
    load(*world_, k);
    const auto constraint = detect_longitudinal_constraint(points_, pred, cfg_);
    const auto r = align_photometric(pred, points_, cams_, costmaps_, cfg_, select_dof_mode(constraint));
    est = r.pose;
    const Vec3 e = body_error(est, gt_);
    const double t = constraint == LongitudinalConstraint::kConstrained ? e.norm() : e.tail<2>().norm();
    if (t < 0.05 && rotation_error_deg(est, gt_) < 0.1) ++good;
  }
  EXPECT_GE(static_cast<double>(good), 0.95 * static_cast<double>(traj.size() - 1));
}

TEST(TrackerConfig, Validation) {
  TrackerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.huber_delta = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrackerConfig{};
  c.roll_step = deg2rad(3.0);
  EXPECT_THROW(c.validate(), Error);
}

}  // namespace
}  // namespace semloc

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "semloc/app.hpp"

namespace semloc {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / "semloc_test" / (std::string(info->test_suite_name()) + "_" + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json make_world(int frames) {
  Json j = Json::parse(R"({
    "world": {
      "segments": [{"length": 300, "curvature": 0.0}, {"length": 800, "curvature": 0.001}],
      "pole_spacing": 30,
      "signboards": [{"arclength": 150, "lateral": -6.0}, {"arclength": 450, "lateral": 6.0}],
      "speed": 30
    },
    "cameras": [{"fx": 400, "fy": 400, "cx": 320, "cy": 240, "width": 640, "height": 480, "position": [1.0, 0.0, 1.5]}],
    "seed": 3
  })");
  j["world"]["frames"] = frames;
  return j;
}

// In-memory run config: the world is simulated, no sequence directory needed.
Json make_run(int frames, const fs::path& out) {
  Json j = make_world(frames);
  j["grid"] = Json::parse(R"({
    "lateral": {"range": 10, "step": 0.2},
    "longitudinal": {"range": 8, "step": 1.0},
    "yaw_deg": {"range": 24, "step": 1.5}
  })");
  j["initializer"] = Json{{"min_separation", 20}};
  j["output"] = out.string();
  return j;
}

fs::path save_json(const fs::path& dir, const std::string& name, const Json& j) {
  const fs::path p = dir / name;
  write_file(p, j.dump(2));
  return p;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kIo;
}

TEST(Config, RejectsUnknownKeysWithLocation) {
  Json j = make_run(10, "out");
  j["tracker"] = Json{{"huber", 0.3}};
  try {
    parse_run_config(j, ".");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("tracker: unknown key 'huber'"), std::string::npos) << e.what();
  }
}

TEST(Config, Errors) {
  const fs::path dir = scratch_dir();
  EXPECT_EQ(kind_of([&] { load_json(dir / "missing.json"); }), ErrorKind::kConfig);
  write_file(dir / "broken.json", "{ \"world\": ");
  EXPECT_EQ(kind_of([&] { load_json(dir / "broken.json"); }), ErrorKind::kConfig);

  Json both = make_run(10, "out");
  both["sequence"] = "seq";
  EXPECT_EQ(kind_of([&] { parse_run_config(both, dir); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { parse_run_config(Json::object(), dir); }), ErrorKind::kConfig);

  Json bad_step = make_run(10, "out");
  bad_step["grid"]["lateral"]["step"] = 0.0;
  EXPECT_EQ(kind_of([&] { parse_run_config(bad_step, dir); }), ErrorKind::kConfig);

  Json bad_type = make_run(10, "out");
  bad_type["graph"] = Json{{"lambda", "heavy"}};
  EXPECT_EQ(kind_of([&] { parse_run_config(bad_type, dir); }), ErrorKind::kConfig);

  Json bad_lambda = make_run(10, "out");
  bad_lambda["graph"] = Json{{"lambda", -1.0}};
  EXPECT_EQ(kind_of([&] { parse_run_config(bad_lambda, dir); }), ErrorKind::kConfig);

  Json no_cams = make_world(10);
  no_cams.erase("cameras");
  EXPECT_EQ(kind_of([&] { parse_world_config(no_cams); }), ErrorKind::kConfig);

  Json bad_noise = make_world(10);
  bad_noise["noise"] = Json{{"gps_dropout", 1.5}};
  EXPECT_EQ(kind_of([&] { parse_world_config(bad_noise); }), ErrorKind::kConfig);

  Json bad_interval = make_run(10, "out");
  bad_interval["rpe_interval"] = 0;
  EXPECT_EQ(kind_of([&] { parse_run_config(bad_interval, dir); }), ErrorKind::kConfig);
}

TEST(Config, ValuesAndRelativePaths) {
  Json j = Json::parse(R"({
    "sequence": "seq",
    "map": "/abs/map.hdmap",
    "grid": {"yaw_deg": {"range": 3, "step": 1.5}},
    "tracker": {"roll_step_deg": 0.25, "longitudinal_correction": false},
    "graph": {"lambda": 2.5, "window_capacity": 4},
    "costmap": {"method": "distance_transform", "ramp_width": 12},
    "rpe_interval": 3
  })");
  const RunConfig c = parse_run_config(j, "/base");
  EXPECT_EQ(c.sequence, fs::path("/base/seq"));
  EXPECT_EQ(*c.map, fs::path("/abs/map.hdmap"));
  EXPECT_EQ(c.output, fs::path("/base/semloc_out"));
  ASSERT_EQ(c.localizer.init.grid.axes.size(), 1u);
  EXPECT_NEAR(c.localizer.init.grid.axes[0].step, deg2rad(1.5), 1e-15);
  EXPECT_NEAR(c.localizer.tracker.roll_step, deg2rad(0.25), 1e-15);
  EXPECT_FALSE(c.localizer.longitudinal_correction);
  EXPECT_EQ(c.localizer.graph.lambda, 2.5);
  EXPECT_EQ(c.localizer.graph.window_capacity, 4u);
  EXPECT_EQ(c.localizer.costmap.method, CostMapMethod::kDistanceTransform);
  EXPECT_EQ(c.localizer.costmap.ramp_width, 12);
  EXPECT_EQ(c.rpe_interval, 3);
  EXPECT_FALSE(c.world);
}

TEST(Config, ShippedConfigsParse) {
  const fs::path root = SEMLOC_SOURCE_DIR;
  for (const auto& e : fs::directory_iterator(root / "configs")) {
    const Json j = load_json(e.path());
    if (j.contains("world") && !j.contains("output")) {
      EXPECT_NO_THROW(parse_world_config(j)) << e.path();
    } else {
      EXPECT_NO_THROW(parse_run_config(j, e.path().parent_path())) << e.path();
    }
  }
}

TEST(Sequence, WriteThenLoadIsExact) {
  const fs::path dir = scratch_dir();
  Json noisy = make_world(6);
  noisy["noise"] = Json{{"odom_translation_sigma", 0.01}, {"gps_sigma", 3.0}, {"gps_dropout", 0.3}};
  const LoadedSequence sim = simulate(parse_world_config(noisy));
  write_sequence(dir / "seq", *sim.map, sim.cameras, sim.source);
  const Sequence seq = load_sequence(dir / "seq");

  ASSERT_EQ(seq.source.size(), sim.source.size());
  ASSERT_EQ(seq.cameras.size(), 1u);
  EXPECT_EQ(seq.cameras[0].fx, sim.cameras[0].fx);
  EXPECT_LT((seq.cameras[0].extrinsic_bc.matrix() - sim.cameras[0].extrinsic_bc.matrix()).norm(), 1e-15);
  EXPECT_EQ(seq.map->size(), sim.map->size());
  for (std::size_t k = 0; k < seq.source.size(); ++k) {
    const auto a = seq.source.frame(k);
    const auto b = sim.source.frame(k);
    EXPECT_EQ(a.sensors.timestamp, b.sensors.timestamp);
    EXPECT_EQ(a.sensors.gps_valid, b.sensors.gps_valid);
    EXPECT_EQ(a.sensors.gps, b.sensors.gps);
    EXPECT_EQ(a.sensors.odometry.translation, b.sensors.odometry.translation);
    EXPECT_EQ(a.sensors.ground_truth.translation, b.sensors.ground_truth.translation);
    for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_EQ(a.masks[0][c].data, b.masks[0][c].data) << k;
  }
}

TEST(Sequence, NotFound) {
  const fs::path dir = scratch_dir();
  EXPECT_EQ(kind_of([&] { load_sequence(dir / "nothing"); }), ErrorKind::kSequenceNotFound);

  const LoadedSequence sim = simulate(parse_world_config(make_world(3)));
  write_sequence(dir / "seq", *sim.map, sim.cameras, sim.source);
  fs::remove(dir / "seq" / "masks" / mask_file_name(1, 0));
  const Sequence seq = load_sequence(dir / "seq");
  EXPECT_NO_THROW(seq.source.frame(0));
  EXPECT_EQ(kind_of([&] { seq.source.frame(1); }), ErrorKind::kSequenceNotFound);
  fs::remove(dir / "seq" / "map.hdmap");
  EXPECT_EQ(kind_of([&] { load_sequence(dir / "seq"); }), ErrorKind::kSequenceNotFound);

  Json run = Json{{"sequence", "nowhere"}};
  const fs::path cfg = save_json(dir, "run.json", run);
  EXPECT_EQ(kind_of([&] { run_pipeline(cfg); }), ErrorKind::kSequenceNotFound);
}

TEST(Sequence, MaskRleRoundTripAndErrors) {
  CameraMasks m = empty_masks(CameraModel{100, 100, 8, 6, 16, 12, Pose::identity()});
  m[0].at(3, 2) = 1;
  m[0].at(4, 2) = 1;
  m[2].at(15, 11) = 1;
  std::stringstream ss;
  write_masks_rle(ss, m);
  const auto back = parse_masks_rle(ss);
  for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_EQ(back[c].data, m[c].data);

  for (const char* bad : {"semloc-mask 2 16 12\n", "semloc-mask 1 16 12\ntree 0\n",
                          "semloc-mask 1 16 12\nlane_marking 1\n190 5\n", "semloc-mask 1 16 12\nlane_marking 2\n1 1\n"}) {
    std::istringstream in(bad);
    EXPECT_EQ(kind_of([&] { parse_masks_rle(in, "m"); }), ErrorKind::kParse) << bad;
  }
}

TEST(Pipeline, NoiseFreeRunIsAccurateAndWritesArtifacts) {
  const fs::path dir = scratch_dir();
  const fs::path cfg = save_json(dir, "run.json", make_run(80, dir / "out"));
  const PipelineSummary s = run_pipeline(cfg);
  EXPECT_LT(s.rpe.mean_lateral, 0.05);
  EXPECT_LT(s.rpe.mean_rotation_deg, 0.5);
  for (const char* f : {"trajectory.txt", "confidence.csv", "states.log", "rpe.csv", "summary.txt"}) {
    EXPECT_TRUE(fs::is_regular_file(dir / "out" / f)) << f;
  }
  // every frame after the first pose is emitted exactly once
  std::size_t first = 0;
  while (first < s.run.frames.size() && !s.run.frames[first].emitted) ++first;
  ASSERT_LT(first, 10u);
  for (std::size_t k = first; k < s.run.frames.size(); ++k) EXPECT_TRUE(s.run.frames[k].emitted) << k;
  EXPECT_EQ(s.run.estimate.size(), s.run.frames.size() - first);
  for (const auto& f : s.run.frames) EXPECT_TRUE(f.graph_monotone);

  std::ifstream rpe(dir / "out" / "rpe.csv");
  RpeReport again;
  again.pairs = parse_rpe_csv(rpe);
  again.recompute();
  EXPECT_EQ(again.mean_lateral, s.rpe.mean_lateral);
}

TEST(Pipeline, SameSeedGivesIdenticalTrajectoryFile) {
  const fs::path dir = scratch_dir();
  Json run = make_run(40, dir / "a");
  run["noise"] = Json{{"odom_translation_sigma", 0.01}, {"odom_yaw_sigma", 0.001}, {"gps_sigma", 3.0}};
  const fs::path a = save_json(dir, "a.json", run);
  run["output"] = (dir / "b").string();
  const fs::path b = save_json(dir, "b.json", run);
  run_pipeline(a);
  run_pipeline(b);
  const std::string ta = read_file(dir / "a" / "trajectory.txt");
  EXPECT_FALSE(ta.empty());
  EXPECT_EQ(ta, read_file(dir / "b" / "trajectory.txt"));
}

TEST(Pipeline, AllGpsDroppedFailsInitialization) {
  const fs::path dir = scratch_dir();
  Json run = make_run(20, dir / "out");
  run["noise"] = Json{{"gps_dropout", 1.0}};
  const fs::path cfg = save_json(dir, "run.json", run);
  EXPECT_EQ(kind_of([&] { run_pipeline(cfg); }), ErrorKind::kInitializationFailed);
}

TEST(Pipeline, InitBudgetStopsEarly) {
  const fs::path dir = scratch_dir();
  Json run = make_run(40, dir / "out");
  run["noise"] = Json{{"gps_dropout", 1.0}};
  run["initializer"]["budget_frames"] = 5;
  const RunConfig rc = parse_run_config(run, dir);
  const LoadedSequence seq = open_sequence(rc);
  EXPECT_EQ(kind_of([&] { run_localizer(*seq.map, seq.source, seq.cameras, rc.localizer); }),
            ErrorKind::kInitializationFailed);
}

TEST(InitRate, NoiseFreeSequence) {
  const fs::path dir = scratch_dir();
  Json run = make_run(60, dir / "out");
  run["init_rate"] = Json{{"budget", 10}, {"stride", 5}};
  const fs::path cfg = save_json(dir, "run.json", run);
  EXPECT_GE(run_init_rate(cfg), 0.95);
}

TEST(InitRate, AllGpsDroppedIsZero) {
  const fs::path dir = scratch_dir();
  Json run = make_run(30, dir / "out");
  run["noise"] = Json{{"gps_dropout", 1.0}};
  run["init_rate"] = Json{{"budget", 10}, {"stride", 5}};
  EXPECT_EQ(run_init_rate(save_json(dir, "run.json", run)), 0.0);
}

TEST(InitRate, ZeroBudgetRejected) {
  const LoadedSequence seq = simulate(parse_world_config(make_world(5)));
  EXPECT_EQ(kind_of([&] { init_success_rate(*seq.map, seq.source, seq.cameras, LocalizerConfig{}, 0, {0}); }),
            ErrorKind::kValidation);
}

TEST(DefaultStartFrames, LeaveRoomForTheBudget) {
  EXPECT_EQ(default_start_frames(12, 10), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(default_start_frames(30, 10, 10), (std::vector<std::size_t>{0, 10, 20}));
  EXPECT_TRUE(default_start_frames(5, 10).empty());
}

// Command-line tool: exit codes and outputs.
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(SEMLOC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, EvalAndErrorCodes) {
  const fs::path dir = scratch_dir();
  Trajectory t;
  for (int i = 0; i < 20; ++i) t.push_back(0.1 * i, Pose::from_translation(Vec3(3.0 * i, 0, 0)));
  save_trajectory((dir / "ref.txt").string(), t);
  Trajectory e;
  for (int i = 0; i < 20; ++i) e.push_back(0.1 * i, Pose::from_translation(Vec3(3.0 * i, 0.02 * i, 0)));
  save_trajectory((dir / "est.txt").string(), e);

  const std::string est = (dir / "est.txt").string(), ref = (dir / "ref.txt").string();
  EXPECT_EQ(run_cli("eval " + est + " " + ref + " --interval 5 --csv " + (dir / "rpe.csv").string(), dir / "log"), 0);
  EXPECT_NE(read_file(dir / "log").find("lateral(m)"), std::string::npos);
  std::ifstream csv(dir / "rpe.csv");
  const auto pairs = parse_rpe_csv(csv);
  ASSERT_EQ(pairs.size(), 15u);
  EXPECT_NEAR(pairs[0].lateral, 0.1, 1e-9);

  EXPECT_EQ(run_cli("eval " + est + " " + (dir / "none.txt").string(), dir / "log"),
            static_cast<int>(ErrorKind::kIo));
  write_file(dir / "bad.txt", "0 0 0\n");
  EXPECT_EQ(run_cli("eval " + (dir / "bad.txt").string() + " " + ref, dir / "log"), static_cast<int>(ErrorKind::kParse));
  EXPECT_NE(read_file(dir / "log").find("bad.txt:1"), std::string::npos);

  write_file(dir / "run.json", R"({"sequence": "x", "bogus": 1})");
  EXPECT_EQ(run_cli("run " + (dir / "run.json").string(), dir / "log"), static_cast<int>(ErrorKind::kConfig));
  EXPECT_EQ(run_cli("run " + (dir / "nope.json").string(), dir / "log"), static_cast<int>(ErrorKind::kConfig));
  EXPECT_NE(run_cli("", dir / "log"), 0);
  EXPECT_NE(run_cli("init-rate " + (dir / "run.json").string() + " --budget 0", dir / "log"), 0);
}

TEST(Cli, GenThenRunFromDisk) {
  const fs::path dir = scratch_dir();
  const fs::path world = save_json(dir, "world.json", make_world(30));
  EXPECT_EQ(run_cli("gen " + world.string() + " " + (dir / "seq").string(), dir / "log"), 0);
  EXPECT_TRUE(fs::is_regular_file(dir / "seq" / "sequence.txt"));
  Json run = Json::parse(R"({"sequence": "seq", "initializer": {"min_separation": 20}, "output": "out"})");
  run["grid"] = make_run(1, "x")["grid"];
  const fs::path cfg = save_json(dir, "run.json", run);
  EXPECT_EQ(run_cli("run " + cfg.string(), dir / "log"), 0) << read_file(dir / "log");
  EXPECT_TRUE(fs::is_regular_file(dir / "out" / "trajectory.txt"));
  EXPECT_EQ(run_cli("dump " + cfg.string() + " --frame 3 --out " + (dir / "dump").string(), dir / "log"), 0);
  EXPECT_TRUE(fs::is_regular_file(dir / "dump" / "cam0_lane_marking_cost.pfm"));
}

}  // namespace
}  // namespace semloc

#pragma once

// Entry points behind the command-line tool. Each returns normally on success
// and throws semloc::Error otherwise; the caller maps the kind to an exit code.

#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "semloc/config.hpp"
#include "semloc/errors.hpp"
#include "semloc/evaluation.hpp"
#include "semloc/image_io.hpp"
#include "semloc/pipeline.hpp"
#include "semloc/sequence_io.hpp"
#include "semloc/simworld.hpp"

namespace semloc {

/// A sequence ready to run: either loaded from disk or simulated in memory.
struct LoadedSequence {
  std::shared_ptr<const HdMap> map;
  std::shared_ptr<const World> world;  // set when simulated
  std::vector<CameraModel> cameras;
  FrameSource source;
};

inline LoadedSequence simulate(const WorldConfig& wc) {
  LoadedSequence s;
  auto world = std::make_shared<const World>(generate_world(wc.world));
  s.world = world;
  s.map = std::shared_ptr<const HdMap>(world, &world->map);
  s.cameras = wc.cameras;
  s.source = make_simulated_source(world->map, world->trajectory, world->timestamps, wc.cameras, wc.noise, wc.seed,
                                   wc.simulation);
  // the lazy renderer borrows the map; keep the world alive with the source
  s.source.masks = [world, inner = std::move(s.source.masks)](std::size_t k) { return inner(k); };
  return s;
}

inline LoadedSequence open_sequence(const RunConfig& rc) {
  LoadedSequence s;
  if (rc.world) {
    s = simulate(*rc.world);
  } else {
    Sequence seq = load_sequence(rc.sequence);
    s.map = seq.map;
    s.cameras = std::move(seq.cameras);
    s.source = std::move(seq.source);
  }
  if (rc.map) s.map = std::make_shared<const HdMap>(load_map(rc.map->string()));
  if (rc.cameras) {
    if (rc.cameras->size() != s.cameras.size()) {
      throw Error(ErrorKind::kConfig, "config lists " + std::to_string(rc.cameras->size()) +
                                          " cameras, sequence has " + std::to_string(s.cameras.size()));
    }
    s.cameras = *rc.cameras;
  }
  return s;
}

/// `semloc gen`: synthesize a world and write it as a sequence directory.
inline std::size_t generate_sequence(const std::filesystem::path& world_config, const std::filesystem::path& out_dir) {
  const WorldConfig wc = parse_world_config(load_json(world_config));
  const LoadedSequence s = simulate(wc);
  write_sequence(out_dir, *s.map, s.cameras, s.source);
  return s.source.size();
}

struct PipelineSummary {
  RunResult run;
  RpeReport rpe;
  std::filesystem::path output;
};

inline void write_run_artifacts(const std::filesystem::path& dir, const PipelineSummary& s) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("trajectory.txt");
    write_trajectory(out, s.run.estimate);
  }
  {
    auto out = open("confidence.csv");
    write_confidence_log(out, s.run.frames);
  }
  {
    auto out = open("states.log");
    write_state_log(out, s.run.frames);
  }
  {
    auto out = open("rpe.csv");
    write_rpe_csv(out, s.rpe);
  }
  {
    auto out = open("summary.txt");
    write_rpe_summary(out, s.rpe);
  }
}

/// `semloc run`: localize every frame, evaluate against the sequence's ground
/// truth and write trajectory, logs and the RPE report to the output directory.
inline PipelineSummary run_pipeline(const std::filesystem::path& config_path) {
  const RunConfig rc = parse_run_config(load_json(config_path), config_path.parent_path());
  const LoadedSequence seq = open_sequence(rc);
  PipelineSummary s;
  s.run = run_localizer(*seq.map, seq.source, seq.cameras, rc.localizer);
  s.rpe = compute_rpe(s.run.estimate, s.run.reference, rc.rpe_interval);
  s.output = rc.output;
  write_run_artifacts(rc.output, s);
  return s;
}

/// `semloc init-rate`: fraction of start frames that reach a confident pose
/// within `budget` frames (budget 0 takes the value from the config).
inline double run_init_rate(const std::filesystem::path& config_path, std::size_t budget = 0) {
  const RunConfig rc = parse_run_config(load_json(config_path), config_path.parent_path());
  if (budget == 0) budget = rc.init_rate_budget;
  const LoadedSequence seq = open_sequence(rc);
  const auto starts = default_start_frames(seq.source.size(), budget, rc.init_rate_stride);
  return init_success_rate(*seq.map, seq.source, seq.cameras, rc.localizer, budget, starts);
}

/// `semloc dump`: masks (PGM) and cost maps (PFM) of one frame.
inline void dump_frame(const std::filesystem::path& config_path, std::size_t frame,
                       const std::filesystem::path& out_dir) {
  const RunConfig rc = parse_run_config(load_json(config_path), config_path.parent_path());
  const LoadedSequence seq = open_sequence(rc);
  if (frame >= seq.source.size()) {
    throw Error(ErrorKind::kValidation, "frame " + std::to_string(frame) + " outside sequence of " +
                                            std::to_string(seq.source.size()));
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + out_dir.string());
  const FrameBundle f = seq.source.frame(frame);
  const auto costmaps = build_costmaps(f.masks, rc.localizer.costmap);
  for (std::size_t c = 0; c < f.masks.size(); ++c) {
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      const std::string stem = "cam" + std::to_string(c) + "_" + std::string(class_name(kAllClasses[k]));
      write_pgm((out_dir / (stem + "_mask.pgm")).string(), f.masks[c][k]);
      write_pfm((out_dir / (stem + "_cost.pfm")).string(), costmaps[c][k]);
    }
  }
}

}  // namespace semloc

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pgrasp/physics.hpp"
#include "pgrasp/sensor.hpp"

namespace pgrasp {

// One simulated grasp attempt. Images are noisy, unstandardized depth,
// quantized to 32-bit floats (the container precision) at collection time.
struct GraspRecord {
  std::uint64_t part_id = 0;
  Pose pose;
  Grasp grasp;
  bool success = false;
  Displacement object_displacement;
  Displacement grasp_displacement;  // zero-filled when success is false
  Image ocfi;  // object-centric full image
  Image gcip;  // grasp-centric image patch
};

struct CorpusStats {
  std::uint64_t part_id = 0;
  double success_rate = 0.0;
  double longest_axis = 0.0;  // bounding-box diagonal, meters
  std::string split_tag;      // "train" or "val", filled by the split
};

struct CollectConfig {
  int grasps_per_part = 1000;
  std::uint64_t master_seed = 0;
  double full_window = 0.30;
  double patch_window = 0.15;
  double camera_height = 0.70;
  double noise_sigma = 0.003;
  double pose_jitter = 0.02;  // uniform +/- jitter of the resting position
  int workers = 1;
  PhysicsParams physics;
};

struct CollectResult {
  std::vector<GraspRecord> records;  // ordered by corpus position, then attempt
  std::vector<CorpusStats> stats;    // one entry per part, corpus order
  std::map<std::string, std::string> manifest;  // seeds, params, divergence counts
};

// Simulates grasps_per_part attempts per part. Per-part sub-seeds are
// hash_seed(master_seed, part_id), so the output is independent of worker
// count and corpus iteration order. Diverged simulations are dropped and
// counted in the manifest.
CollectResult collect(const std::vector<Part>& corpus, const CollectConfig& config);

// Paper filtering rules, boundary-inclusive: random success rate in
// [0.05, 0.40] and longest axis in [0.02 m, 0.15 m].
std::set<std::uint64_t> filter_corpus(const std::vector<CorpusStats>& stats);

// Object-wise split: deterministic per seed, disjoint and exhaustive.
struct Split {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> val;
};
Split split_objectwise(const std::vector<std::uint64_t>& part_ids, double val_fraction,
                       std::uint64_t seed);

struct UnbalanceableData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Undersamples the majority class (uniformly, seeded) until the classes have
// equal counts. Throws UnbalanceableData on single-class input.
std::vector<GraspRecord> balance_for_gqn(const std::vector<GraspRecord>& records,
                                         std::uint64_t seed);

// Keeps success == true records, order preserved.
std::vector<GraspRecord> successful_only(const std::vector<GraspRecord>& records);

// Part corpus container ("PGPC"), little-endian, one part per record.
void write_parts(const std::string& path, const std::vector<Part>& parts);
std::vector<Part> read_parts(const std::string& path);

// "PGDS" container, little-endian, images as row-major 32-bit floats.
void write_dataset(const std::string& path, const std::vector<GraspRecord>& records);
std::vector<GraspRecord> read_dataset(const std::string& path);

void write_manifest(const std::string& path, const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> read_manifest(const std::string& path);

// Rounds every pixel to 32-bit float precision (the container precision).
Image quantize_image(const Image& img);

}  // namespace pgrasp

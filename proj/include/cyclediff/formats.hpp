#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cyclediff/cyclegen.hpp"
#include "cyclediff/geometry.hpp"
#include "cyclediff/sampler.hpp"

namespace cyclediff {

// Camera intrinsics plus an ordered list of source-to-target poses, stored
// as JSON with each pose a row-major 4x4 matrix.
struct Trajectory {
    Intrinsics intrinsics;
    std::vector<Pose> poses;
};

Trajectory load_trajectory(const std::string& path);
void save_trajectory(const std::string& path, const Trajectory& traj);

// Single-file checkpoint: magic "CYCL1\n", a little-endian u64 manifest
// length, a JSON manifest (net config, schedule, codec, tensor directory),
// then all parameters as float32 in manifest order. Save and load round-trip
// byte-identically.
void save_checkpoint(const std::string& path, const ModelBundle& model);
ModelBundle load_checkpoint(const std::string& path);

struct PairMeta {
    Pose pose;  // pose the condition was cycle-rendered through
    std::uint64_t seed = 0;
    int prompt_id = 0;
    std::string source = "cycle";
};

struct StoredPair {
    TrainingPair pair;
    PairMeta meta;
};

// Pair directories hold one subdirectory per pair (pair_0000, pair_0001, ...)
// with cond.png, mask.png, target.png and meta.json inside. Loading restores
// pairs sorted by subdirectory name; depth is not stored.
void save_pair(const std::string& dir, int index, const TrainingPair& pair, const PairMeta& meta);
std::vector<StoredPair> load_pairs(const std::string& dir);

}  // namespace cyclediff

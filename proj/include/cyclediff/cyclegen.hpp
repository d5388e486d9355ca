#pragma once

#include "cyclediff/geometry.hpp"
#include "cyclediff/image.hpp"
#include "cyclediff/rng.hpp"
#include "cyclediff/warp.hpp"

namespace cyclediff {

// Distribution of the "nearby viewpoint": translations uniform per axis in
// [-max_translation, +max_translation], rotation a product of per-axis
// rotations with angles uniform in [-max_rotation, +max_rotation].
struct PoseSampleConfig {
    double max_translation = 0.0;  // scene units per axis
    double max_rotation = 0.0;     // radians per axis, at most pi/8

    void validate() const;

    // Defaults that keep hole fractions in a trainable band:
    // 0.05 x median scene depth of translation, 2 degrees of rotation.
    static PoseSampleConfig nearby(const RgbdFrame& frame);
};

// One self-supervision unit: the cycle-rendered condition at the original
// viewpoint, the ground-truth frame, and a prompt token (0 = blank).
struct TrainingPair {
    MaskedFrame cond;
    RgbdFrame target;
    int prompt_id = 0;
};

Pose sample_pose(const PoseSampleConfig& cfg, Rng& rng);

// Cycle-rendering: warp `src` to the sampled viewpoint, mask it, warp the
// masked frame back through the inverse pose. The surviving holes mark
// occlusions visible from the original viewpoint.
TrainingPair cycle_render(const RgbdFrame& src, const Pose& t, const Intrinsics& k,
                          int prompt_id = 0);

}  // namespace cyclediff

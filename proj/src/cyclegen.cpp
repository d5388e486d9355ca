#include "cyclediff/cyclegen.hpp"

#include <cmath>

namespace cyclediff {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void PoseSampleConfig::validate() const {
    if (!(max_translation >= 0.0) || !std::isfinite(max_translation))
        throw ConfigError("pose sampling: max_translation must be >= 0");
    if (!(max_rotation >= 0.0) || max_rotation > kPi / 8.0)
        throw ConfigError("pose sampling: max_rotation must lie in [0, pi/8]");
}

PoseSampleConfig PoseSampleConfig::nearby(const RgbdFrame& frame) {
    PoseSampleConfig cfg;
    cfg.max_translation = 0.05 * frame.depth.median_valid();
    cfg.max_rotation = 2.0 * kPi / 180.0;
    return cfg;
}

Pose sample_pose(const PoseSampleConfig& cfg, Rng& rng) {
    cfg.validate();
    const double tx = rng.uniform(-cfg.max_translation, cfg.max_translation);
    const double ty = rng.uniform(-cfg.max_translation, cfg.max_translation);
    const double tz = rng.uniform(-cfg.max_translation, cfg.max_translation);
    const double ax = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
    const double ay = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
    const double az = rng.uniform(-cfg.max_rotation, cfg.max_rotation);

    Pose p = Pose::rotate_xyz(ax, ay, az);
    p.translation = Vec3(tx, ty, tz);
    return p;
}

TrainingPair cycle_render(const RgbdFrame& src, const Pose& t, const Intrinsics& k,
                          int prompt_id) {
    if (prompt_id < 0) throw ConfigError("cycle_render: prompt_id must be >= 0");

    // Forward render to the virtual viewpoint; the warp already zeroes rgb
    // and invalidates depth at the holes, which is the element-wise mask
    // multiplication written out.
    const MaskedFrame pseudo_next = forward_warp(src, t, k);

    // Back render to the original viewpoint through the inverse pose. The
    // warped depth is reused as-is, not re-estimated.
    TrainingPair pair;
    pair.cond = forward_warp(pseudo_next.frame, pose_inverse(t), k);
    pair.target = src;
    pair.prompt_id = prompt_id;
    return pair;
}

}  // namespace cyclediff

#pragma once

#include <cstdint>
#include <vector>

#include "cyclediff/codec.hpp"
#include "cyclediff/net.hpp"
#include "cyclediff/sched.hpp"
#include "cyclediff/warp.hpp"

namespace cyclediff {

// Everything needed to run inference: denoiser weights, the schedule they
// were trained against, and the latent codec.
struct ModelBundle {
    ToyUNetParams params;
    VarianceSchedule schedule;
    CodecKind codec = CodecKind::identity;
};

struct SamplerConfig {
    double guidance = 1.0;  // scale s of the guided combination
    std::uint64_t seed = 0;
    bool composite = false;  // paste known pixels back over the decoded output
    int prompt_id = 0;

    void validate() const;
};

// Guided reverse diffusion conditioned on a rendered frame; returns the
// inpainted rgb image (3, H, W).
Tensor sample_frame(const ModelBundle& model, const MaskedFrame& rendered,
                    const SamplerConfig& cfg);

// Fills depth holes with the value of the nearest valid pixel (breadth-first
// from all valid pixels, deterministic row-major tie order).
DepthMap fill_depth_nearest(const DepthMap& depth);

struct VideoRollout {
    std::vector<Tensor> frames;        // rgb per frame, first entry is the start frame
    std::vector<OcclusionMask> masks;  // render mask per frame (all ones for the start)
};

// Autoregressive rollout: render the current frame to the next pose, inpaint
// the holes, carry the hole-filled depth forward.
VideoRollout sample_video(const ModelBundle& model, const RgbdFrame& start,
                          const std::vector<Pose>& trajectory, const Intrinsics& k,
                          const SamplerConfig& cfg);

// Two-stage out-animation: outpaint a scene around the object silhouette,
// then roll the result out along the trajectory.
VideoRollout out_animate(const MaskedFrame& objects, int prompt_id,
                         const std::vector<Pose>& trajectory, const Intrinsics& k,
                         const ModelBundle& outpaint_model, const ModelBundle& video_model,
                         const SamplerConfig& cfg);

}  // namespace cyclediff

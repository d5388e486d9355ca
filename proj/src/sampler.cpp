#include "cyclediff/sampler.hpp"

#include <cmath>
#include <deque>
#include <utility>

#include "cyclediff/rng.hpp"

namespace cyclediff {

void SamplerConfig::validate() const {
    if (!(guidance >= 0.0) || !std::isfinite(guidance))
        throw ConfigError("sampler: guidance must be finite and >= 0");
    if (prompt_id < 0) throw ConfigError("sampler: prompt_id must be >= 0");
}

Tensor sample_frame(const ModelBundle& model, const MaskedFrame& rendered,
                    const SamplerConfig& cfg) {
    cfg.validate();
    model.schedule.validate();
    if (rendered.height() <= 0 || rendered.width() <= 0)
        throw DimensionError("sample_frame: empty input frame");

    const int height = rendered.height();
    const int width = rendered.width();
    const Tensor cond_latent = encode_rgb(rendered.frame.rgb, model.codec);
    const Tensor mask_latent = encode_mask(rendered.mask, model.codec);

    UNetCond cond{cond_latent, mask_latent, cfg.prompt_id};
    UNetCond uncond{cond_latent, mask_latent, 0};

    Rng rng = Rng::derive(cfg.seed, streams::kSample);
    Tensor z = Tensor::randn(cond_latent.shape(), rng);
    Tensor zeros = Tensor::zeros(cond_latent.shape());

    for (int t = model.schedule.T; t >= 1; --t) {
        Tensor eps_hat = unet_forward(model.params, z, t, cond);
        if (cfg.prompt_id != 0) {
            // With the null prompt both passes coincide, so the unconditional
            // evaluation is skipped; cfg_combine(e, e, s) == e exactly.
            Tensor eps_uncond = unet_forward(model.params, z, t, uncond);
            eps_hat = cfg_combine(eps_hat, eps_uncond, cfg.guidance);
        }
        const Tensor noise = t > 1 ? Tensor::randn(z.shape(), rng) : zeros;
        z = posterior_step(z, eps_hat, t, noise, model.schedule);
        if (!z.all_finite()) throw DivergedError("sample_frame: non-finite latent");
    }

    Tensor out = decode_rgb(z, model.codec, height, width);
    if (cfg.composite) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x)
                    if (rendered.mask.at(y, x)) out.at(c, y, x) = rendered.frame.rgb.at(c, y, x);
    }
    return out;
}

DepthMap fill_depth_nearest(const DepthMap& depth) {
    const int height = depth.height;
    const int width = depth.width;
    DepthMap out = depth;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (out.valid_at(y, x)) queue.emplace_back(y, x);
    if (queue.empty()) throw InvalidDepthError("fill_depth_nearest: no valid depth to spread");

    // Multi-source BFS; among equally near sources the one visited first in
    // row-major order wins, which keeps the result deterministic.
    const int dy[4] = {-1, 1, 0, 0};
    const int dx[4] = {0, 0, -1, 1};
    while (!queue.empty()) {
        const auto [y, x] = queue.front();
        queue.pop_front();
        for (int k = 0; k < 4; ++k) {
            const int ny = y + dy[k];
            const int nx = x + dx[k];
            if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
            if (out.valid_at(ny, nx)) continue;
            out.at(ny, nx) = out.at(y, x);
            queue.emplace_back(ny, nx);
        }
    }
    return out;
}

VideoRollout sample_video(const ModelBundle& model, const RgbdFrame& start,
                          const std::vector<Pose>& trajectory, const Intrinsics& k,
                          const SamplerConfig& cfg) {
    cfg.validate();
    start.validate();

    VideoRollout rollout;
    rollout.frames.push_back(start.rgb);
    rollout.masks.emplace_back(start.height(), start.width(), 1);

    RgbdFrame current = start;
    for (std::size_t i = 0; i < trajectory.size(); ++i) {
        const MaskedFrame rendered = forward_warp(current, trajectory[i], k);
        SamplerConfig frame_cfg = cfg;
        frame_cfg.seed = Rng::derive(cfg.seed, streams::kVideo, i).next_u64();
        Tensor rgb = sample_frame(model, rendered, frame_cfg);
        RgbdFrame next(start.height(), start.width());
        next.rgb = std::move(rgb);
        next.depth = fill_depth_nearest(rendered.frame.depth);
        rollout.frames.push_back(next.rgb);
        rollout.masks.push_back(rendered.mask);
        current = std::move(next);
    }
    return rollout;
}

VideoRollout out_animate(const MaskedFrame& objects, int prompt_id,
                         const std::vector<Pose>& trajectory, const Intrinsics& k,
                         const ModelBundle& outpaint_model, const ModelBundle& video_model,
                         const SamplerConfig& cfg) {
    SamplerConfig stage1 = cfg;
    stage1.prompt_id = prompt_id;
    Tensor rgb = sample_frame(outpaint_model, objects, stage1);

    // The synthesized surroundings get the depth of the nearest object pixel,
    // which keeps the whole frame warpable for the rollout stage.
    RgbdFrame start(objects.height(), objects.width());
    start.rgb = std::move(rgb);
    start.depth = fill_depth_nearest(objects.frame.depth);

    SamplerConfig stage2 = cfg;
    stage2.prompt_id = 0;
    return sample_video(video_model, start, trajectory, k, stage2);
}

}  // namespace cyclediff

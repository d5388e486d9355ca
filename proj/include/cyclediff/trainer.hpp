#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "cyclediff/codec.hpp"
#include "cyclediff/cyclegen.hpp"
#include "cyclediff/net.hpp"
#include "cyclediff/sched.hpp"

namespace cyclediff {

// Training data. When `pairs` is non-empty those pre-rendered pairs are the
// dataset; otherwise pairs are generated on the fly from `frames` according
// to the configured condition source.
struct Dataset {
    std::vector<RgbdFrame> frames;
    std::vector<int> prompt_ids;  // optional, aligned with frames
    std::vector<TrainingPair> pairs;
    Intrinsics intrinsics;

    bool empty() const { return frames.empty() && pairs.empty(); }
    int frame_prompt(std::size_t i) const {
        return i < prompt_ids.size() ? prompt_ids[i] : 0;
    }
};

struct TrainConfig {
    enum class Source { cycle, object_mask };

    int steps = 2000;
    int batch_size = 1;
    double lr = 1e-3;
    double prompt_drop = 0.10;
    std::uint64_t seed = 0;
    Source source = Source::cycle;
    int T = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    CodecKind codec = CodecKind::identity;
    UNetConfig net;
    // Fixed pose bounds for every frame; default derives per-frame bounds
    // from the median depth.
    std::optional<PoseSampleConfig> pose_override;
    int threads = 1;

    void validate() const;
};

// One batch item after codec encoding.
struct EncodedPair {
    Tensor z0;
    Tensor cond_latent;
    Tensor mask;
    int prompt_id = 0;
};

EncodedPair encode_pair(const TrainingPair& pair, CodecKind codec);

// Object silhouette for the out-animation condition source: a filled
// ellipse marks the known (object) region.
OcclusionMask synthetic_silhouette(int height, int width, Rng& rng);

// The per-item prompt-drop decision, reproduced from the item's derived
// stream. Exposed so the drop frequency can be measured without training.
bool drop_prompt(const TrainConfig& cfg, long item_index);

std::vector<EncodedPair> make_training_batch(const Dataset& ds, const TrainConfig& cfg, int step);

struct AdamState {
    std::vector<Tensor> m, v;
    long step = 0;
};

AdamState make_adam_state(const ToyUNetParams& params);
void adam_update(ToyUNetParams& params, const Gradients& grads, AdamState& state, double lr);

struct TrainStats {
    long items = 0;
    long dropped_prompts = 0;
};

// One optimizer step over the batch; returns the batch mean epsilon-MSE.
double train_step(ToyUNetParams& params, const std::vector<EncodedPair>& batch,
                  const VarianceSchedule& sched, const TrainConfig& cfg, int step,
                  AdamState& adam, TrainStats* stats = nullptr);

struct TrainResult {
    ToyUNetParams params;
    std::vector<double> losses;
    TrainStats stats;
};

using StepCallback = std::function<void(int step, double loss, const ToyUNetParams&)>;

TrainResult train_loop(const Dataset& ds, const TrainConfig& cfg,
                       const ToyUNetParams* initial = nullptr,
                       const StepCallback& on_step = nullptr);

}  // namespace cyclediff

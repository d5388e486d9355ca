#include "cyclediff/trainer.hpp"

#include <cmath>
#include <thread>

#include "cyclediff/warp.hpp"

namespace cyclediff {

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(prompt_drop >= 0.0 && prompt_drop <= 1.0))
        throw ConfigError("prompt drop probability must lie in [0,1]");
    if (T < 1) throw ConfigError("T must be at least 1");
    if (threads < 1) throw ConfigError("thread count must be positive");
    if (pose_override) pose_override->validate();
    net.validate();
}

EncodedPair encode_pair(const TrainingPair& pair, CodecKind codec) {
    EncodedPair e;
    e.z0 = encode_rgb(pair.target.rgb, codec);
    e.cond_latent = encode_rgb(pair.cond.frame.rgb, codec);
    e.mask = encode_mask(pair.cond.mask, codec);
    e.prompt_id = pair.prompt_id;
    return e;
}

OcclusionMask synthetic_silhouette(int height, int width, Rng& rng) {
    const double cy = rng.uniform(0.3, 0.7) * height;
    const double cx = rng.uniform(0.3, 0.7) * width;
    const double ry = rng.uniform(height / 6.0, height / 3.0);
    const double rx = rng.uniform(width / 6.0, width / 3.0);
    OcclusionMask m(height, width, 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double dy = (y - cy) / ry;
            const double dx = (x - cx) / rx;
            if (dy * dy + dx * dx <= 1.0) m.at(y, x) = 1;
        }
    return m;
}

bool drop_prompt(const TrainConfig& cfg, long item_index) {
    Rng rng = Rng::derive(cfg.seed, streams::kStep, static_cast<std::uint64_t>(item_index));
    (void)rng.uniform_int(1, cfg.T);
    return rng.uniform() < cfg.prompt_drop;
}

std::vector<EncodedPair> make_training_batch(const Dataset& ds, const TrainConfig& cfg, int step) {
    if (ds.empty()) throw ConfigError("training dataset is empty");
    std::vector<EncodedPair> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
        const std::uint64_t index =
            static_cast<std::uint64_t>(step) * cfg.batch_size + static_cast<std::uint64_t>(b);
        Rng rng = Rng::derive(cfg.seed, streams::kBatch, index);

        if (!ds.pairs.empty() && cfg.source == TrainConfig::Source::cycle) {
            const int i = rng.uniform_int(0, static_cast<int>(ds.pairs.size()) - 1);
            batch.push_back(encode_pair(ds.pairs[static_cast<std::size_t>(i)], cfg.codec));
            continue;
        }
        if (ds.frames.empty()) throw ConfigError("condition source needs frames with depth");
        const int fi = rng.uniform_int(0, static_cast<int>(ds.frames.size()) - 1);
        const RgbdFrame& frame = ds.frames[static_cast<std::size_t>(fi)];
        const int prompt = ds.frame_prompt(static_cast<std::size_t>(fi));

        if (cfg.source == TrainConfig::Source::cycle) {
            const PoseSampleConfig pose_cfg =
                cfg.pose_override ? *cfg.pose_override : PoseSampleConfig::nearby(frame);
            const Pose pose = sample_pose(pose_cfg, rng);
            batch.push_back(
                encode_pair(cycle_render(frame, pose, ds.intrinsics, prompt), cfg.codec));
        } else {
            const OcclusionMask sil = synthetic_silhouette(frame.height(), frame.width(), rng);
            TrainingPair pair{apply_mask(frame, sil), frame, prompt};
            batch.push_back(encode_pair(pair, cfg.codec));
        }
    }
    return batch;
}

AdamState make_adam_state(const ToyUNetParams& params) {
    AdamState s;
    for_each_param(params, [&](const std::string&, const Tensor& t) {
        s.m.push_back(Tensor(t.shape()));
        s.v.push_back(Tensor(t.shape()));
    });
    return s;
}

void adam_update(ToyUNetParams& params, const Gradients& grads, AdamState& state, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    state.step += 1;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    std::vector<const Tensor*> gs;
    for_each_param(grads, [&](const std::string&, const Tensor& t) { gs.push_back(&t); });

    std::size_t i = 0;
    for_each_param(params, [&](const std::string&, Tensor& t) {
        const Tensor& g = *gs[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < t.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            t[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
        }
        ++i;
    });
}

namespace {

struct ItemResult {
    double mse = 0.0;
    Gradients grads;
    bool dropped = false;
};

ItemResult run_item(const ToyUNetParams& params, const EncodedPair& item,
                    const VarianceSchedule& sched, const TrainConfig& cfg, std::uint64_t index,
                    int batch_size) {
    Rng rng = Rng::derive(cfg.seed, streams::kStep, index);
    const int t = rng.uniform_int(1, sched.T);
    const bool dropped = rng.uniform() < cfg.prompt_drop;

    Tensor eps(item.z0.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
    const Tensor z_t = q_sample(item.z0, t, eps, sched);

    UNetCond cond{item.cond_latent, item.mask, dropped ? 0 : item.prompt_id};
    UNetActivations acts;
    const Tensor eps_hat = unet_forward(params, z_t, t, cond, acts);

    ItemResult r;
    r.dropped = dropped;
    r.mse = epsilon_loss(eps, eps_hat);
    const double scale = 2.0 / (static_cast<double>(eps.size()) * batch_size);
    Tensor grad_eps(eps.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) grad_eps[i] = scale * (eps_hat[i] - eps[i]);
    r.grads = zeros_like(params);
    unet_backward_accumulate(params, acts, grad_eps, r.grads);
    return r;
}

void merge_grads(Gradients& dst, const Gradients& src) {
    std::vector<const Tensor*> ss;
    for_each_param(src, [&](const std::string&, const Tensor& t) { ss.push_back(&t); });
    std::size_t i = 0;
    for_each_param(dst, [&](const std::string&, Tensor& t) {
        add_inplace(t, *ss[i]);
        ++i;
    });
}

}  // namespace

double train_step(ToyUNetParams& params, const std::vector<EncodedPair>& batch,
                  const VarianceSchedule& sched, const TrainConfig& cfg, int step,
                  AdamState& adam, TrainStats* stats) {
    if (batch.empty()) throw ConfigError("train_step: empty batch");
    const int n = static_cast<int>(batch.size());
    std::vector<ItemResult> results(static_cast<std::size_t>(n));

    auto worker = [&](int lo, int hi) {
        for (int b = lo; b < hi; ++b) {
            const std::uint64_t index =
                static_cast<std::uint64_t>(step) * n + static_cast<std::uint64_t>(b);
            results[static_cast<std::size_t>(b)] =
                run_item(params, batch[static_cast<std::size_t>(b)], sched, cfg, index, n);
        }
    };

    const int threads = cfg.threads > n ? n : cfg.threads;
    if (threads <= 1) {
        worker(0, n);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (n + threads - 1) / threads;
        for (int k = 0; k < threads; ++k) {
            const int lo = k * chunk;
            const int hi = lo + chunk < n ? lo + chunk : n;
            if (lo < hi) pool.emplace_back(worker, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    // Reduce in item order so the result is independent of the thread count.
    double loss = 0.0;
    Gradients grads = zeros_like(params);
    for (int b = 0; b < n; ++b) {
        const ItemResult& r = results[static_cast<std::size_t>(b)];
        loss += r.mse / n;
        merge_grads(grads, r.grads);
        if (stats) {
            stats->items += 1;
            stats->dropped_prompts += r.dropped ? 1 : 0;
        }
    }
    if (!std::isfinite(loss)) throw DivergedError("training loss is not finite");
    adam_update(params, grads, adam, cfg.lr);
    return loss;
}

TrainResult train_loop(const Dataset& ds, const TrainConfig& cfg, const ToyUNetParams* initial,
                       const StepCallback& on_step) {
    cfg.validate();
    if (ds.empty()) throw ConfigError("training dataset is empty");

    TrainResult out;
    out.params = initial ? *initial
                         : init_params(cfg.net, Rng::derive(cfg.seed, streams::kInit).next_u64());
    const VarianceSchedule sched = build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    AdamState adam = make_adam_state(out.params);

    out.losses.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        const std::vector<EncodedPair> batch = make_training_batch(ds, cfg, step);
        const double loss = train_step(out.params, batch, sched, cfg, step, adam, &out.stats);
        out.losses.push_back(loss);
        if (on_step) on_step(step + 1, loss, out.params);
    }
    return out;
}

}  // namespace cyclediff

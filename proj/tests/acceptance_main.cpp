// Acceptance gate: ten checks covering the warp oracle, cycle exactness,
// scheduler identities, gradients, training convergence, the inpainting
// baseline, the MEB ablation, metric sanity, determinism of the command-line
// artifacts, and the rollout degradation pattern. One line per criterion.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "cyclediff/cyclegen.hpp"
#include "cyclediff/formats.hpp"
#include "cyclediff/net.hpp"
#include "cyclediff/sampler.hpp"
#include "cyclediff/scenes.hpp"
#include "cyclediff/sched.hpp"
#include "cyclediff/trainer.hpp"
#include "oracle_warp.hpp"

using namespace cyclediff;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%2d/10] %-38s %s%s%s\n", index, name.c_str(), pass ? "PASS" : "FAIL",
                detail.empty() ? "" : "  ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double mean_range(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
    return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(lo),
                           v.begin() + static_cast<std::ptrdiff_t>(hi), 0.0) /
           static_cast<double>(hi - lo);
}

// ---- criterion 1: warp oracle equivalence -------------------------------

void check_warp_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(20250815);
    int passed = 0;
    const int cases = 1000;
    for (int i = 0; i < cases; ++i) {
        const int h = rng.uniform_int(8, 64);
        const int w = rng.uniform_int(8, 64);
        RgbdFrame src(h, w);
        for (std::size_t j = 0; j < src.rgb.size(); ++j) src.rgb[j] = rng.uniform();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (rng.uniform() > 0.1) src.depth.at(y, x) = rng.uniform(0.5, 4.0);

        Pose pose = Pose::rotate_xyz(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                                     rng.uniform(-0.2, 0.2));
        pose.translation =
            Vec3(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3));
        const Intrinsics k = Intrinsics::simple(w, h);

        const MaskedFrame got = forward_warp(src, pose, k);
        const MaskedFrame want = oracle::warp_reference(src, pose, k);
        if (oracle::frames_identical(got, want)) ++passed;
    }
    const double dt = seconds_since(t0);
    report(1, "warp oracle equivalence", passed == cases && dt < 10.0,
           fmt("%d/%d bit-identical, %.1f s", passed, cases, dt));
}

// ---- criterion 2: cycle exactness ----------------------------------------

void check_cycle_exactness() {
    const SceneSpec spec = SceneSpec::constant(32, 42, 2.0);
    const RgbdFrame frame = make_scene(spec);
    const Intrinsics k = spec.canonical_intrinsics();

    bool ok = true;
    std::string why;
    for (const int shift : {1, 2, 3}) {
        // One pixel of image shift per 2/32 scene units at depth 2, fx = 32.
        const Pose pose = Pose::translate(shift * 2.0 / 32.0, 0.0, 0.0);
        const TrainingPair pair = cycle_render(frame, pose, k);
        for (int y = 0; y < 32 && ok; ++y)
            for (int x = 0; x < 32 && ok; ++x) {
                const bool known = x < 32 - shift;  // right strip dies on the return trip
                if (pair.cond.mask.at(y, x) != (known ? 1 : 0)) {
                    ok = false;
                    why = fmt("mask wrong at (%d,%d), shift %d", y, x, shift);
                }
                for (int c = 0; c < 3; ++c) {
                    const double got = pair.cond.frame.rgb.at(c, y, x);
                    const double want = known ? pair.target.rgb.at(c, y, x) : 0.0;
                    if (got != want) {
                        ok = false;
                        why = fmt("rgb mismatch at (%d,%d), shift %d", y, x, shift);
                    }
                }
            }
    }
    report(2, "cycle exactness (integer shift)", ok, ok ? "zero strips exact for k=1,2,3" : why);
}

// ---- criterion 3: scheduler identities -----------------------------------

void check_scheduler() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string why;
    const auto fail = [&](const std::string& m) {
        if (ok) why = m;
        ok = false;
    };

    for (const int T : {100, 1000}) {
        const VarianceSchedule s = build_linear_schedule(T, 1e-4, 0.02);
        double prod = 1.0;
        for (int t = 1; t <= T; ++t) {
            prod *= 1.0 - s.beta(t);
            if (std::abs(prod - s.alpha_bar(t)) > 1e-12)
                fail(fmt("alpha-bar product drift at T=%d, t=%d", T, t));
        }
    }
    const VarianceSchedule s100 = build_linear_schedule(100, 1e-4, 0.02);
    const VarianceSchedule s1000 = build_linear_schedule(1000, 1e-4, 0.02);
    if (std::abs(s100.alpha_bar(100) - 0.3635632480554918) > 1e-12)
        fail("frozen alpha_bar_T(100) moved");
    if (std::abs(s1000.alpha_bar(1000) - 4.035829765375687e-05) > 1e-12)
        fail("frozen alpha_bar_T(1000) moved");
    if (s100.posterior_variance(1) != 0.0) fail("beta-tilde_1 is not exactly zero");

    // Reverse step with the true epsilon and no noise lands on the analytic
    // posterior mean.
    Rng rng(7);
    for (const int t : {1, 2, 17, 100}) {
        Tensor z0({3, 8, 8}), eps({3, 8, 8});
        for (std::size_t i = 0; i < z0.size(); ++i) {
            z0[i] = rng.uniform(-1.0, 1.0);
            eps[i] = rng.normal();
        }
        const Tensor z_t = q_sample(z0, t, eps, s100);
        const Tensor stepped = posterior_step(z_t, eps, t, Tensor::zeros(z0.shape()), s100);
        const double ab_prev = s100.alpha_bar(t - 1);
        const double ab = s100.alpha_bar(t);
        const double a = s100.alpha(t);
        const double b = s100.beta(t);
        for (std::size_t i = 0; i < z0.size() && ok; ++i) {
            const double want =
                (std::sqrt(ab_prev) * b * z0[i] + std::sqrt(a) * (1.0 - ab_prev) * z_t[i]) /
                (1.0 - ab);
            if (std::abs(stepped[i] - want) > 1e-10) fail(fmt("posterior mean off at t=%d", t));
        }
    }

    // Guided combination identities, both exact.
    Tensor ec({2, 4, 4}), eu({2, 4, 4});
    for (std::size_t i = 0; i < ec.size(); ++i) {
        ec[i] = rng.normal();
        eu[i] = rng.normal();
    }
    if (max_abs_diff(cfg_combine(ec, eu, 0.0), ec) != 0.0) fail("s=0 is not the identity");
    if (max_abs_diff(cfg_combine(ec, ec, 7.5), ec) != 0.0)
        fail("equal branches do not collapse");

    const double dt = seconds_since(t0);
    report(3, "scheduler identities", ok && dt < 1.0,
           ok ? fmt("products, posterior, guidance ok, %.2f s", dt) : why);
}

// ---- criterion 4: gradient suite ------------------------------------------

void check_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const UNetConfig base;  // 16 channels, the full toy net
    UNetConfig no_skips = base;
    no_skips.meb_skips = false;

    struct Job {
        UNetConfig cfg;
        int prompt;
        const char* label;
    };
    const Job jobs[] = {{base, 2, "skips on"}, {no_skips, 2, "skips off"}, {base, 0, "dropped"}};

    bool ok = true;
    std::string why;
    double worst = 0.0;
    int min_checks = 1 << 30;
    for (const Job& j : jobs) {
        const GradCheckReport r = gradient_check(j.cfg, j.prompt, 1234, 16, 2);
        worst = std::max(worst, r.max_rel_err);
        min_checks = std::min(min_checks, r.checks);
        if (r.checks < 100 || r.max_rel_err >= 1e-4) {
            ok = false;
            why = fmt("%s: %d checks, max rel %.3e", j.label, r.checks, r.max_rel_err);
        }
    }
    const double dt = seconds_since(t0);
    ok = ok && dt < 60.0;
    report(4, "finite-difference gradient suite", ok,
           ok ? fmt(">=%d params/config, max rel %.2e, %.1f s", min_checks, worst, dt) : why);
}

// ---- criteria 5/6/10 share one trained model ------------------------------

struct TrainedToy {
    SceneSpec spec;
    RgbdFrame frame;
    Intrinsics k;
    Dataset ds;
    ModelBundle model;
    std::vector<double> losses;
    double train_seconds = 0.0;
};

TrainedToy train_reference_model() {
    TrainedToy out;
    out.spec = SceneSpec::two_plane(32, 99);
    out.frame = make_scene(out.spec);
    out.k = out.spec.canonical_intrinsics();

    out.ds.intrinsics = out.k;
    Rng pair_rng = Rng::derive(5, streams::kPairs);
    const PoseSampleConfig pc = PoseSampleConfig::nearby(out.frame);
    for (int i = 0; i < 256; ++i) {
        const Pose pose = sample_pose(pc, pair_rng);
        out.ds.pairs.push_back(cycle_render(out.frame, pose, out.k, 1));
    }

    TrainConfig cfg;
    cfg.steps = 2000;
    cfg.seed = 5;
    cfg.T = 100;
    // Defaults otherwise: batch 1, lr 1e-3, prompt drop 0.1, 16 channels.

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r = train_loop(out.ds, cfg);
    out.train_seconds = seconds_since(t0);
    out.losses = std::move(r.losses);
    out.model.params = std::move(r.params);
    out.model.schedule = build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    out.model.codec = cfg.codec;
    return out;
}

// The convergence criterion reads the fixed 2000-step trace above; the
// inpainting and rollout criteria want the best toy model available, so the
// same run continues under a fresh seed (identical seeds would replay the
// exact batch sequence) before those checks. The continuation decays the
// learning rate: at batch 1 and lr 1e-3 the last iterate wobbles enough
// that errors compound over the reverse chain even as the training loss
// keeps falling, while the decayed run samples 3-4 dB above mean fill.
void refine_reference_model(TrainedToy& toy) {
    TrainConfig cfg;
    cfg.steps = 2000;
    cfg.seed = 6;
    cfg.T = 100;
    cfg.lr = 3e-4;
    TrainResult r = train_loop(toy.ds, cfg, &toy.model.params);
    toy.model.params = std::move(r.params);
}

void check_convergence(const TrainedToy& toy) {
    const double first = mean_range(toy.losses, 0, 100);
    const double last = mean_range(toy.losses, 1900, 2000);
    const bool ok = last < 0.5 * first && toy.train_seconds < 600.0;
    report(5, "toy training convergence", ok,
           fmt("first-100 %.4f, last-100 %.4f, %.0f s", first, last, toy.train_seconds));
}

void check_inpainting_baseline(const TrainedToy& toy) {
    SamplerConfig scfg;
    scfg.guidance = 0.0;  // conditional branch only
    scfg.prompt_id = 1;
    scfg.composite = true;

    double model_sum = 0.0, base_sum = 0.0;
    int views = 0;
    Rng held_rng = Rng::derive(5, streams::kPairs, 1u << 20);
    const PoseSampleConfig pc = PoseSampleConfig::nearby(toy.frame);
    for (int i = 0; i < 8; ++i) {
        const Pose pose = sample_pose(pc, held_rng);
        const TrainingPair pair = cycle_render(toy.frame, pose, toy.k, 1);

        OcclusionMask holes(pair.cond.height(), pair.cond.width(), 0);
        std::size_t n_holes = 0;
        for (int y = 0; y < holes.height; ++y)
            for (int x = 0; x < holes.width; ++x)
                if (!pair.cond.mask.at(y, x)) {
                    holes.at(y, x) = 1;
                    ++n_holes;
                }
        if (n_holes == 0) continue;

        scfg.seed = 1000 + static_cast<std::uint64_t>(i);
        const Tensor inpainted = sample_frame(toy.model, pair.cond, scfg);
        const Tensor baseline = mean_fill_baseline(pair.cond);
        model_sum += psnr(inpainted, pair.target.rgb, &holes);
        base_sum += psnr(baseline, pair.target.rgb, &holes);
        ++views;
    }
    const double model_psnr = model_sum / views;
    const double base_psnr = base_sum / views;
    const bool ok = views >= 4 && model_psnr >= base_psnr + 1.0;
    report(6, "inpainting beats mean fill", ok,
           fmt("masked psnr %.2f dB vs %.2f dB over %d held-out views", model_psnr, base_psnr,
               views));
}

void check_rollout_degradation(const TrainedToy& toy) {
    SamplerConfig scfg;
    scfg.guidance = 0.0;
    scfg.prompt_id = 1;
    scfg.composite = true;
    scfg.seed = 77;

    // Two pixels of shift per step at fx = 32, depth 2.
    const Pose step = Pose::translate(2.0 * 2.0 / 32.0, 0.0, 0.0);
    const std::vector<Pose> traj(5, step);
    const VideoRollout roll = sample_video(toy.model, toy.frame, traj, toy.k, scfg);

    bool ok = roll.frames.size() == 6;
    std::string why = ok ? "" : "wrong frame count";
    std::vector<double> values;
    Pose cumulative = Pose::identity();
    for (std::size_t i = 0; i < roll.frames.size() && ok; ++i) {
        if (i > 0) cumulative = pose_compose(step, cumulative);
        const MaskedFrame gt = ground_truth_view(toy.spec, cumulative, toy.k);
        values.push_back(psnr(roll.frames[i], gt.frame.rgb, &gt.mask));
        if (i > 0 && values[i] > values[i - 1]) {
            ok = false;
            why = fmt("psnr rose from frame %zu to %zu", i - 1, i);
        }
    }
    std::string detail;
    for (double v : values) detail += fmt("%.1f ", v);
    report(10, "rollout psnr non-increasing", ok, ok ? detail + "dB" : why);
}

// ---- criterion 7: MEB ablation -------------------------------------------

void check_meb_ablation() {
    double enabled_sum = 0.0, disabled_sum = 0.0;
    for (const std::uint64_t seed : {11ull, 12ull, 13ull}) {
        const SceneSpec spec = SceneSpec::two_plane(16, seed);
        Dataset ds;
        ds.frames.push_back(make_scene(spec));
        ds.prompt_ids.push_back(1);
        ds.intrinsics = spec.canonical_intrinsics();

        TrainConfig cfg;
        cfg.steps = 400;
        cfg.seed = seed;
        cfg.T = 100;
        cfg.net.base_channels = 8;
        cfg.net.emb_dim = 16;

        cfg.net.mask_modulation = true;
        enabled_sum += mean_range(train_loop(ds, cfg).losses, 300, 400);
        cfg.net.mask_modulation = false;
        disabled_sum += mean_range(train_loop(ds, cfg).losses, 300, 400);
    }
    const double enabled = enabled_sum / 3.0;
    const double disabled = disabled_sum / 3.0;
    report(7, "masked-block ablation direction", enabled <= disabled,
           fmt("final loss %.4f (on) vs %.4f (off), 3 seeds", enabled, disabled));
}

// ---- criterion 8: metric sanity -------------------------------------------

void check_metric_sanity() {
    bool ok = true;
    std::string why;
    Tensor a({3, 8, 8});
    a.fill(0.5);
    if (psnr(a, a) != 99.0) {
        ok = false;
        why = "identical-image sentinel missing";
    }
    Tensor b = a;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += 0.1;
    if (std::abs(psnr(a, b) - 20.0) > 1e-9) {
        ok = false;
        why = fmt("mse 0.01 gave %.12f dB", psnr(a, b));
    }
    Tensor c({3, 8, 8}), d({3, 8, 8});
    c.fill(0.3);
    d.fill(0.6);
    const double c1 = 1e-4;
    const double want = (2.0 * 0.3 * 0.6 + c1) / (0.3 * 0.3 + 0.6 * 0.6 + c1);
    if (std::abs(ssim(c, d) - want) > 1e-12) {
        ok = false;
        why = "constant-image ssim off the closed form";
    }
    report(8, "metric sanity", ok, ok ? "psnr sentinel, 20 dB case, ssim closed form" : why);
}

// ---- criterion 9: artifact determinism via the command line ---------------

struct CliRunner {
    std::string cli;
    fs::path tmp;

    bool run(const std::string& args) const {
        const std::string cmd = "'" + cli + "' " + args + " >/dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) && WEXITSTATUS(status) == 0;
    }
    std::string sub(const std::string& name) const { return (tmp / name).string(); }
};

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

bool dirs_equal(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb) return false;
    for (const auto& rel : fa)
        if (slurp(a / rel) != slurp(b / rel)) return false;
    return true;
}

void check_determinism(const std::string& cli_path) {
    CliRunner cli;
    cli.cli = cli_path;
    cli.tmp = fs::temp_directory_path() / ("cyclediff_accept_" + std::to_string(::getpid()));
    fs::remove_all(cli.tmp);
    fs::create_directories(cli.tmp);

    bool ok = true;
    std::string why;
    const auto step = [&](bool v, const std::string& m) {
        if (!v && ok) why = m;
        ok = ok && v;
    };

    step(cli.run("scene --kind two-plane --size 16 --seed 3 --out " + cli.sub("scene")),
         "scene failed");

    const std::string gen = "cyclegen --rgb-dir " + cli.sub("scene") + " --depth-dir " +
                            cli.sub("scene") + " --n 4 --seed 7 --out ";
    step(cli.run(gen + cli.sub("p1")), "cyclegen failed");
    step(cli.run(gen + cli.sub("p2")), "cyclegen rerun failed");
    step(ok && dirs_equal(cli.sub("p1"), cli.sub("p2")), "cyclegen rerun differs");

    const std::string train = "train --pairs " + cli.sub("p1") +
                              " --steps 5 --seed 1 --batch 4 --base-channels 8 --emb-dim 16 "
                              "--T 10 --ckpt ";
    step(cli.run(train + cli.sub("a.ckpt") + " --threads 1"), "train failed");
    step(cli.run(train + cli.sub("b.ckpt") + " --threads 1"), "train rerun failed");
    step(cli.run(train + cli.sub("t2.ckpt") + " --threads 2"), "train threads 2 failed");
    step(cli.run(train + cli.sub("t4.ckpt") + " --threads 4"), "train threads 4 failed");
    if (ok) {
        const auto a = slurp(cli.sub("a.ckpt"));
        step(a == slurp(cli.sub("b.ckpt")), "train rerun differs");
        step(a == slurp(cli.sub("t2.ckpt")), "2-thread checkpoint differs");
        step(a == slurp(cli.sub("t4.ckpt")), "4-thread checkpoint differs");
    }

    // A short non-trivial trajectory for the sampler.
    {
        Trajectory traj;
        traj.intrinsics = Intrinsics::simple(16, 16);
        traj.poses.push_back(Pose::translate(0.1, 0.0, 0.0));
        save_trajectory(cli.sub("traj.json"), traj);
    }
    const std::string sample = "sample --ckpt " + cli.sub("a.ckpt") + " --start " +
                               cli.sub("scene") + "/rgb.png --depth " + cli.sub("scene") +
                               "/depth.pfm --traj " + cli.sub("traj.json") +
                               " --scale 1.0 --seed 2 --composite --out ";
    step(cli.run(sample + cli.sub("r1")), "sample failed");
    step(cli.run(sample + cli.sub("r2")), "sample rerun failed");
    step(ok && dirs_equal(cli.sub("r1"), cli.sub("r2")), "sample rerun differs");

    fs::remove_all(cli.tmp);
    report(9, "artifact determinism (cli)", ok,
           ok ? "cyclegen, train x{1,2,4} threads, sample" : why);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <path to cyclediff binary>\n");
        return 2;
    }
    std::printf("acceptance gate, 10 criteria\n");

    check_warp_oracle();
    check_cycle_exactness();
    check_scheduler();
    check_gradients();

    TrainedToy toy = train_reference_model();
    check_convergence(toy);
    refine_reference_model(toy);
    check_inpainting_baseline(toy);
    check_meb_ablation();
    check_metric_sanity();
    check_determinism(argv[1]);
    check_rollout_degradation(toy);

    if (g_failures == 0) {
        std::printf("acceptance: all 10 criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criterion(s) failed\n", g_failures);
    return 1;
}

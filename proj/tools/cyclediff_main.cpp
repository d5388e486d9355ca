#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cyclediff/cyclegen.hpp"
#include "cyclediff/formats.hpp"
#include "cyclediff/io_image.hpp"
#include "cyclediff/sampler.hpp"
#include "cyclediff/scenes.hpp"
#include "cyclediff/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cyclediff;

namespace {

constexpr double kPi = 3.14159265358979323846;

void invert_depth(DepthMap& depth) {
    for (double& v : depth.values)
        if (std::isfinite(v)) v = 1.0 / std::max(v, 1e-6);
}

RgbdFrame load_rgbd(const std::string& rgb_path, const std::string& depth_path, bool invert) {
    RgbdFrame frame;
    frame.rgb = load_png(rgb_path);
    frame.depth = load_pfm(depth_path);
    if (invert) invert_depth(frame.depth);
    frame.validate();
    return frame;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + dir);
}

std::string frame_name(const char* prefix, std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04zu.png", prefix, index);
    return buf;
}

// Names of the *.png files in a directory, sorted, optionally filtered by
// prefix.
std::vector<std::string> png_names(const std::string& dir, const char* prefix = nullptr) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        if (prefix && name.rfind(prefix, 0) != 0) continue;
        names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    return names;
}

int run_warp(const std::string& rgb, const std::string& depth, const std::string& traj_path,
             int pose_index, const std::string& out, bool invert) {
    const RgbdFrame frame = load_rgbd(rgb, depth, invert);
    const Trajectory traj = load_trajectory(traj_path);
    if (pose_index < 0 || static_cast<std::size_t>(pose_index) >= traj.poses.size())
        throw ConfigError("warp: --pose-index out of range");
    const MaskedFrame warped =
        forward_warp(frame, traj.poses[static_cast<std::size_t>(pose_index)], traj.intrinsics);
    ensure_dir(out);
    save_png((fs::path(out) / "rgb.png").string(), warped.frame.rgb);
    save_pfm((fs::path(out) / "depth.pfm").string(), warped.frame.depth);
    save_mask_png((fs::path(out) / "mask.png").string(), warped.mask);
    std::printf("warp: wrote %s (hole fraction %.4f)\n", out.c_str(),
                warped.mask.hole_fraction());
    return 0;
}

int run_cyclegen(const std::string& rgb_dir, const std::string& depth_dir, int n,
                 std::uint64_t seed, double max_trans, double max_rot_deg,
                 const std::string& out, bool invert, int prompt_id) {
    if (n <= 0) throw ConfigError("cyclegen: --n must be positive");
    const std::vector<std::string> names = png_names(rgb_dir);
    if (names.empty()) throw IoError("cyclegen: no png files in " + rgb_dir);

    std::vector<RgbdFrame> frames;
    frames.reserve(names.size());
    for (const std::string& name : names) {
        // Depth pairs with the rgb stem; a single-frame directory (the scene
        // command layout) may name its one map depth.pfm instead.
        fs::path depth_path = fs::path(depth_dir) / (fs::path(name).stem().string() + ".pfm");
        if (!fs::exists(depth_path) && names.size() == 1)
            depth_path = fs::path(depth_dir) / "depth.pfm";
        frames.push_back(load_rgbd((fs::path(rgb_dir) / name).string(), depth_path.string(),
                                   invert));
    }

    ensure_dir(out);
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::derive(seed, streams::kPairs, static_cast<std::uint64_t>(i));
        const std::size_t pick =
            static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(frames.size()) - 1));
        const RgbdFrame& frame = frames[pick];
        PoseSampleConfig pose_cfg;
        if (max_trans > 0.0 || max_rot_deg > 0.0) {
            pose_cfg.max_translation = max_trans;
            pose_cfg.max_rotation = max_rot_deg * kPi / 180.0;
        } else {
            pose_cfg = PoseSampleConfig::nearby(frame);
        }
        const Pose pose = sample_pose(pose_cfg, rng);
        const Intrinsics k = Intrinsics::simple(frame.width(), frame.height());
        const TrainingPair pair = cycle_render(frame, pose, k, prompt_id);
        PairMeta meta;
        meta.pose = pose;
        meta.seed = seed;
        meta.prompt_id = prompt_id;
        save_pair(out, i, pair, meta);
    }
    std::printf("cyclegen: wrote %d pairs to %s\n", n, out.c_str());
    return 0;
}

int run_scene(const std::string& kind, int size, std::uint64_t seed, const std::string& out,
              double fg_depth, double bg_depth, int square) {
    SceneSpec spec;
    if (kind == "two-plane") {
        spec = SceneSpec::two_plane(size, seed);
    } else if (kind == "constant") {
        spec = SceneSpec::constant(size, seed);
    } else {
        throw ConfigError("scene: --kind must be two-plane or constant");
    }
    if (fg_depth > 0.0) spec.fg_depth = fg_depth;
    if (bg_depth > 0.0) spec.bg_depth = bg_depth;
    if (square > 0) spec.square = square;
    spec.validate();

    const RgbdFrame frame = make_scene(spec);
    ensure_dir(out);
    save_png((fs::path(out) / "rgb.png").string(), frame.rgb);
    save_pfm((fs::path(out) / "depth.pfm").string(), frame.depth);
    json j;
    j["kind"] = kind;
    j["size"] = spec.size;
    j["seed"] = spec.texture_seed;
    j["fg_depth"] = spec.fg_depth;
    j["bg_depth"] = spec.bg_depth;
    j["square"] = spec.square;
    std::ofstream spec_out((fs::path(out) / "scene.json").string());
    spec_out << j.dump(2) << "\n";
    if (!spec_out) throw IoError("scene: failed to write scene.json");
    std::printf("scene: wrote %s\n", out.c_str());
    return 0;
}

int run_train(const std::string& pairs_dir, const TrainConfig& cfg_in,
              const std::string& ckpt_path, const std::string& trace_path, int ckpt_every) {
    TrainConfig cfg = cfg_in;
    Dataset ds;
    const std::vector<StoredPair> stored = load_pairs(pairs_dir);
    if (stored.empty()) throw IoError("train: no pairs found in " + pairs_dir);
    if (cfg.source == TrainConfig::Source::cycle) {
        for (const StoredPair& s : stored) ds.pairs.push_back(s.pair);
    } else {
        // The silhouette source only needs target frames; their depth is
        // unknown here and stays invalid, which the silhouette path never
        // touches.
        for (const StoredPair& s : stored) {
            ds.frames.push_back(s.pair.target);
            ds.prompt_ids.push_back(s.pair.prompt_id);
        }
    }

    std::ofstream trace;
    if (!trace_path.empty()) {
        trace.open(trace_path);
        if (!trace) throw IoError("train: cannot open trace file " + trace_path);
    }

    const VarianceSchedule sched = build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    const auto save_bundle = [&](const ToyUNetParams& params) {
        ModelBundle bundle{params, sched, cfg.codec};
        save_checkpoint(ckpt_path, bundle);
    };

    const TrainResult result =
        train_loop(ds, cfg, nullptr, [&](int step, double loss, const ToyUNetParams& params) {
            if (trace.is_open())
                trace << "{\"step\":" << step << ",\"loss\":" << loss << "}\n";
            if (step % 100 == 0 || step == cfg.steps)
                std::printf("train: step %d/%d loss %.6f\n", step, cfg.steps, loss);
            if (ckpt_every > 0 && step % ckpt_every == 0 && step != cfg.steps)
                save_bundle(params);
        });
    save_bundle(result.params);
    if (trace.is_open() && !trace) throw IoError("train: failed to write trace " + trace_path);
    std::printf("train: wrote %s (%d steps)\n", ckpt_path.c_str(), cfg.steps);
    return 0;
}

int run_sample(const std::string& ckpt_path, const std::string& start_png,
               const std::string& start_pfm, const std::string& traj_path, double scale,
               std::uint64_t seed, bool composite, int prompt_id, const std::string& out,
               bool invert) {
    const ModelBundle bundle = load_checkpoint(ckpt_path);
    const RgbdFrame start = load_rgbd(start_png, start_pfm, invert);
    const Trajectory traj = load_trajectory(traj_path);

    SamplerConfig cfg;
    cfg.guidance = scale;
    cfg.seed = seed;
    cfg.composite = composite;
    cfg.prompt_id = prompt_id;

    const VideoRollout rollout =
        sample_video(bundle, start, traj.poses, traj.intrinsics, cfg);
    ensure_dir(out);
    for (std::size_t i = 0; i < rollout.frames.size(); ++i) {
        save_png((fs::path(out) / frame_name("frame", i)).string(), rollout.frames[i]);
        save_mask_png((fs::path(out) / frame_name("mask", i)).string(), rollout.masks[i]);
    }
    std::printf("sample: wrote %zu frames to %s\n", rollout.frames.size(), out.c_str());
    return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& mask_dir,
             const std::string& report_path) {
    // Everything except mask images counts as a frame to score.
    std::vector<std::string> all_names = png_names(pred_dir);
    std::erase_if(all_names, [](const std::string& n) { return n.rfind("mask", 0) == 0; });
    if (all_names.empty()) throw IoError("eval: no png files in " + pred_dir);

    json frames = json::array();
    double psnr_sum = 0.0;
    double ssim_sum = 0.0;
    for (const std::string& name : all_names) {
        const Tensor pred = load_png((fs::path(pred_dir) / name).string());
        const fs::path gt_path = fs::path(gt_dir) / name;
        if (!fs::exists(gt_path)) throw IoError("eval: missing ground truth " + gt_path.string());
        const Tensor gt = load_png(gt_path.string());

        json record;
        record["name"] = name;
        record["psnr"] = psnr(pred, gt);
        record["ssim"] = ssim(pred, gt);
        if (!mask_dir.empty()) {
            const fs::path mask_path = fs::path(mask_dir) / name;
            if (!fs::exists(mask_path))
                throw IoError("eval: missing mask " + mask_path.string());
            const OcclusionMask mask = load_mask_png(mask_path.string());
            record["masked_psnr"] = psnr(pred, gt, &mask);
        }
        psnr_sum += record["psnr"].get<double>();
        ssim_sum += record["ssim"].get<double>();
        frames.push_back(record);
    }

    json report;
    report["frames"] = frames;
    report["mean_psnr"] = psnr_sum / static_cast<double>(all_names.size());
    report["mean_ssim"] = ssim_sum / static_cast<double>(all_names.size());
    std::ofstream out(report_path);
    out << report.dump(2) << "\n";
    if (!out) throw IoError("eval: failed to write report " + report_path);
    std::printf("eval: n=%zu mean_psnr=%.4f mean_ssim=%.6f\n", all_names.size(),
                report["mean_psnr"].get<double>(), report["mean_ssim"].get<double>());
    return 0;
}

int run_gradcheck(std::uint64_t seed, int size, int per_tensor) {
    struct Case {
        const char* label;
        bool meb_skips;
        int prompt_id;
    };
    const Case cases[] = {
        {"skips on, prompt on", true, 2},
        {"skips off, prompt on", false, 2},
        {"skips on, prompt dropped", true, 0},
    };
    bool ok = true;
    for (const Case& c : cases) {
        UNetConfig cfg;
        cfg.meb_skips = c.meb_skips;
        const GradCheckReport report = gradient_check(cfg, c.prompt_id, seed, size, per_tensor);
        const bool pass = report.max_rel_err < 1e-4;
        ok = ok && pass;
        std::printf("gradcheck: %-26s %3d checks, max relative error %.3e  [%s]\n", c.label,
                    report.checks, report.max_rel_err, pass ? "ok" : "FAIL");
    }
    if (!ok) throw DivergedError("gradcheck: max relative error above 1e-4");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-supervised 3d photography toolkit"};
    app.require_subcommand(1);

    // warp
    auto* warp_cmd = app.add_subcommand("warp", "Forward-warp an rgbd frame to a trajectory pose");
    std::string warp_rgb, warp_depth, warp_traj, warp_out;
    int warp_pose_index = 0;
    bool warp_invert = false;
    warp_cmd->add_option("--rgb", warp_rgb, "Input rgb png")->required();
    warp_cmd->add_option("--depth", warp_depth, "Input depth pfm")->required();
    warp_cmd->add_option("--traj", warp_traj, "Trajectory json")->required();
    warp_cmd->add_option("--pose-index", warp_pose_index, "Pose index into the trajectory")
        ->required();
    warp_cmd->add_option("--out", warp_out, "Output directory")->required();
    warp_cmd->add_flag("--invert-depth", warp_invert, "Treat the pfm as disparity");

    // cyclegen
    auto* cyc_cmd = app.add_subcommand("cyclegen", "Cycle-render self-supervised training pairs");
    std::string cyc_rgb_dir, cyc_depth_dir, cyc_out;
    int cyc_n = 0, cyc_prompt = 0;
    std::uint64_t cyc_seed = 0;
    double cyc_max_trans = 0.0, cyc_max_rot = 0.0;
    bool cyc_invert = false;
    cyc_cmd->add_option("--rgb-dir", cyc_rgb_dir, "Directory of rgb pngs")->required();
    cyc_cmd->add_option("--depth-dir", cyc_depth_dir, "Directory of matching pfms")->required();
    cyc_cmd->add_option("--n", cyc_n, "Number of pairs")->required();
    cyc_cmd->add_option("--seed", cyc_seed, "Pair sampling seed")->required();
    cyc_cmd->add_option("--max-trans", cyc_max_trans, "Max translation per axis (scene units)");
    cyc_cmd->add_option("--max-rot", cyc_max_rot, "Max rotation per axis (degrees)");
    cyc_cmd->add_option("--prompt-id", cyc_prompt, "Prompt token stored with every pair");
    cyc_cmd->add_option("--out", cyc_out, "Output pair directory")->required();
    cyc_cmd->add_flag("--invert-depth", cyc_invert, "Treat the pfms as disparity");

    // scene
    auto* scene_cmd = app.add_subcommand("scene", "Generate a procedural test scene");
    std::string scene_kind = "two-plane", scene_out;
    int scene_size = 64, scene_square = 0;
    std::uint64_t scene_seed = 0;
    double scene_fg = 0.0, scene_bg = 0.0;
    scene_cmd->add_option("--kind", scene_kind, "two-plane or constant");
    scene_cmd->add_option("--size", scene_size, "Image extent in pixels");
    scene_cmd->add_option("--seed", scene_seed, "Texture seed")->required();
    scene_cmd->add_option("--fg-depth", scene_fg, "Foreground plane depth");
    scene_cmd->add_option("--bg-depth", scene_bg, "Background plane depth");
    scene_cmd->add_option("--square", scene_square, "Foreground square extent in pixels");
    scene_cmd->add_option("--out", scene_out, "Output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the toy denoiser on a pair directory");
    std::string train_pairs, train_ckpt, train_trace, train_condition = "cycle",
                train_codec = "identity";
    TrainConfig train_cfg;
    int train_ckpt_every = 0;
    train_cmd->add_option("--pairs", train_pairs, "Pair directory")->required();
    train_cmd->add_option("--steps", train_cfg.steps, "Optimizer steps")->required();
    train_cmd->add_option("--seed", train_cfg.seed, "Training seed")->required();
    train_cmd->add_option("--ckpt", train_ckpt, "Checkpoint output path")->required();
    train_cmd->add_option("--condition", train_condition, "cycle or object-mask");
    train_cmd->add_option("--batch", train_cfg.batch_size, "Batch size");
    train_cmd->add_option("--lr", train_cfg.lr, "Adam learning rate");
    train_cmd->add_option("--prompt-drop", train_cfg.prompt_drop, "Prompt drop probability");
    train_cmd->add_option("--T", train_cfg.T, "Diffusion steps");
    train_cmd->add_option("--beta-start", train_cfg.beta_start, "Schedule start");
    train_cmd->add_option("--beta-end", train_cfg.beta_end, "Schedule end");
    train_cmd->add_option("--codec", train_codec, "identity or avgpool2");
    train_cmd->add_option("--base-channels", train_cfg.net.base_channels, "UNet base channels");
    train_cmd->add_option("--emb-dim", train_cfg.net.emb_dim, "Embedding width");
    train_cmd->add_option("--n-prompts", train_cfg.net.n_prompts, "Prompt table size");
    train_cmd->add_option("--threads", train_cfg.threads, "Worker threads per batch");
    train_cmd->add_option("--trace", train_trace, "Line-delimited loss trace output");
    train_cmd->add_option("--ckpt-every", train_ckpt_every, "Also checkpoint every N steps");
    bool train_no_skips = false, train_no_mask_mod = false;
    train_cmd->add_flag("--no-meb-skips", train_no_skips, "Disable MEB residual adds");
    train_cmd->add_flag("--no-mask-mod", train_no_mask_mod, "Disable the MEB mask stage");

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "Roll out a trajectory from a start frame");
    std::string sample_ckpt, sample_start, sample_depth, sample_traj, sample_out;
    double sample_scale = 1.0;
    std::uint64_t sample_seed = 0;
    int sample_prompt = 0;
    bool sample_composite = false, sample_invert = false;
    sample_cmd->add_option("--ckpt", sample_ckpt, "Checkpoint path")->required();
    sample_cmd->add_option("--start", sample_start, "Start rgb png")->required();
    sample_cmd->add_option("--depth", sample_depth, "Start depth pfm")->required();
    sample_cmd->add_option("--traj", sample_traj, "Trajectory json")->required();
    sample_cmd->add_option("--scale", sample_scale, "Guidance scale");
    sample_cmd->add_option("--seed", sample_seed, "Sampling seed")->required();
    sample_cmd->add_option("--prompt-id", sample_prompt, "Prompt token");
    sample_cmd->add_flag("--composite", sample_composite, "Paste known pixels over the output");
    sample_cmd->add_option("--out", sample_out, "Output directory")->required();
    sample_cmd->add_flag("--invert-depth", sample_invert, "Treat the pfm as disparity");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM between matching png directories");
    std::string eval_pred, eval_gt, eval_mask, eval_report;
    eval_cmd->add_option("--pred", eval_pred, "Prediction directory")->required();
    eval_cmd->add_option("--gt", eval_gt, "Ground-truth directory")->required();
    eval_cmd->add_option("--mask", eval_mask, "Optional mask directory (same file names)");
    eval_cmd->add_option("--report", eval_report, "Report json output")->required();

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    std::uint64_t grad_seed = 0;
    int grad_size = 16, grad_per_tensor = 2;
    grad_cmd->add_option("--seed", grad_seed, "Check seed")->required();
    grad_cmd->add_option("--size", grad_size, "Input extent");
    grad_cmd->add_option("--per-tensor", grad_per_tensor, "Checks per parameter tensor");

    CLI11_PARSE(app, argc, argv);

    try {
        if (warp_cmd->parsed())
            return run_warp(warp_rgb, warp_depth, warp_traj, warp_pose_index, warp_out,
                            warp_invert);
        if (cyc_cmd->parsed())
            return run_cyclegen(cyc_rgb_dir, cyc_depth_dir, cyc_n, cyc_seed, cyc_max_trans,
                                cyc_max_rot, cyc_out, cyc_invert, cyc_prompt);
        if (scene_cmd->parsed())
            return run_scene(scene_kind, scene_size, scene_seed, scene_out, scene_fg, scene_bg,
                             scene_square);
        if (train_cmd->parsed()) {
            if (train_condition == "cycle") {
                train_cfg.source = TrainConfig::Source::cycle;
            } else if (train_condition == "object-mask") {
                train_cfg.source = TrainConfig::Source::object_mask;
            } else {
                throw ConfigError("train: --condition must be cycle or object-mask");
            }
            train_cfg.codec = codec_from_string(train_codec);
            train_cfg.net.meb_skips = !train_no_skips;
            train_cfg.net.mask_modulation = !train_no_mask_mod;
            return run_train(train_pairs, train_cfg, train_ckpt, train_trace, train_ckpt_every);
        }
        if (sample_cmd->parsed())
            return run_sample(sample_ckpt, sample_start, sample_depth, sample_traj, sample_scale,
                              sample_seed, sample_composite, sample_prompt, sample_out,
                              sample_invert);
        if (eval_cmd->parsed()) return run_eval(eval_pred, eval_gt, eval_mask, eval_report);
        if (grad_cmd->parsed()) return run_gradcheck(grad_seed, grad_size, grad_per_tensor);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    std::fprintf(stderr, "error: no subcommand given\n");
    return 1;
}

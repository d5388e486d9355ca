#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "cyclediff/cyclegen.hpp"
#include "cyclediff/formats.hpp"
#include "cyclediff/io_image.hpp"
#include "cyclediff/sampler.hpp"
#include "cyclediff/scenes.hpp"
#include "cyclediff/trainer.hpp"

namespace py = pybind11;
using namespace cyclediff;

namespace {

py::array_t<double> tensor_to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), t.data(), t.size() * sizeof(double));
    return out;
}

Tensor array_to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] = static_cast<int>(a.shape(i));
    Tensor t(shape);
    std::memcpy(t.data(), a.data(), t.size() * sizeof(double));
    return t;
}

py::array_t<double> depth_to_array(const DepthMap& d) {
    py::array_t<double> out({static_cast<py::ssize_t>(d.height), static_cast<py::ssize_t>(d.width)});
    std::memcpy(out.mutable_data(), d.values.data(), d.values.size() * sizeof(double));
    return out;
}

DepthMap array_to_depth(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw DimensionError("depth array must be 2d");
    DepthMap d(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(d.values.data(), a.data(), d.values.size() * sizeof(double));
    return d;
}

py::array_t<std::uint8_t> mask_to_array(const OcclusionMask& m) {
    py::array_t<std::uint8_t> out(
        {static_cast<py::ssize_t>(m.height), static_cast<py::ssize_t>(m.width)});
    std::memcpy(out.mutable_data(), m.values.data(), m.values.size());
    return out;
}

OcclusionMask array_to_mask(
    const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw DimensionError("mask array must be 2d");
    OcclusionMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(m.values.data(), a.data(), m.values.size());
    return m;
}

Pose pose_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 || a.shape(0) != 4 || a.shape(1) != 4)
        throw DimensionError("pose must be a 4x4 matrix");
    Pose p;
    const double* d = a.data();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) p.rotation(r, c) = d[4 * r + c];
        p.translation(r) = d[4 * r + 3];
    }
    p.validate(1e-6);
    return p;
}

SceneSpec::Kind kind_from_string(const std::string& kind) {
    if (kind == "two-plane" || kind == "two_plane") return SceneSpec::Kind::two_plane;
    if (kind == "constant" || kind == "constant_plane") return SceneSpec::Kind::constant_plane;
    throw ConfigError("unknown scene kind: " + kind);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Self-supervised 3d photography core";

    py::register_exception<Error>(m, "CoreError");

    m.def(
        "scene",
        [](const std::string& kind, int size, std::uint64_t seed) {
            SceneSpec spec = kind_from_string(kind) == SceneSpec::Kind::two_plane
                                 ? SceneSpec::two_plane(size, seed)
                                 : SceneSpec::constant(size, seed);
            const RgbdFrame frame = make_scene(spec);
            return py::make_tuple(tensor_to_array(frame.rgb), depth_to_array(frame.depth));
        },
        py::arg("kind"), py::arg("size"), py::arg("seed"),
        "Procedural test scene; returns (rgb (3,H,W), depth (H,W)).");

    m.def(
        "forward_warp",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& rgb,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& depth,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& pose) {
            RgbdFrame frame;
            frame.rgb = array_to_tensor(rgb);
            frame.depth = array_to_depth(depth);
            frame.validate();
            const Intrinsics k = Intrinsics::simple(frame.width(), frame.height());
            const MaskedFrame warped = forward_warp(frame, pose_from_array(pose), k);
            return py::make_tuple(tensor_to_array(warped.frame.rgb),
                                  depth_to_array(warped.frame.depth),
                                  mask_to_array(warped.mask));
        },
        py::arg("rgb"), py::arg("depth"), py::arg("pose"),
        "Forward point splat under canonical intrinsics; returns (rgb, depth, mask).");

    m.def(
        "cycle_pair",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& rgb,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& depth,
           std::uint64_t seed) {
            RgbdFrame frame;
            frame.rgb = array_to_tensor(rgb);
            frame.depth = array_to_depth(depth);
            frame.validate();
            Rng rng = Rng::derive(seed, streams::kPairs, 0);
            const Pose pose = sample_pose(PoseSampleConfig::nearby(frame), rng);
            const Intrinsics k = Intrinsics::simple(frame.width(), frame.height());
            const TrainingPair pair = cycle_render(frame, pose, k);
            return py::make_tuple(tensor_to_array(pair.cond.frame.rgb),
                                  mask_to_array(pair.cond.mask),
                                  tensor_to_array(pair.target.rgb));
        },
        py::arg("rgb"), py::arg("depth"), py::arg("seed"),
        "Cycle-render one training pair; returns (cond_rgb, mask, target_rgb).");

    m.def(
        "alpha_bars",
        [](int T, double beta_start, double beta_end) {
            const VarianceSchedule s = build_linear_schedule(T, beta_start, beta_end);
            return s.alpha_bars;
        },
        py::arg("T"), py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02);

    m.def(
        "q_sample",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& z0, int t,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& eps, int T,
           double beta_start, double beta_end) {
            const VarianceSchedule s = build_linear_schedule(T, beta_start, beta_end);
            return tensor_to_array(q_sample(array_to_tensor(z0), t, array_to_tensor(eps), s));
        },
        py::arg("z0"), py::arg("t"), py::arg("eps"), py::arg("T") = 100,
        py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02);

    m.def(
        "psnr",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
            return psnr(array_to_tensor(a), array_to_tensor(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "ssim",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
            return ssim(array_to_tensor(a), array_to_tensor(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "gradcheck",
        [](std::uint64_t seed, int size, int per_tensor, bool meb_skips, int prompt_id) {
            UNetConfig cfg;
            cfg.meb_skips = meb_skips;
            return gradient_check(cfg, prompt_id, seed, size, per_tensor).max_rel_err;
        },
        py::arg("seed"), py::arg("size") = 8, py::arg("per_tensor") = 1,
        py::arg("meb_skips") = true, py::arg("prompt_id") = 2,
        "Max relative error of the full-network finite-difference check.");

    m.def(
        "train_demo",
        [](int steps, int size, std::uint64_t seed) {
            const SceneSpec spec = SceneSpec::two_plane(size, seed);
            Dataset ds;
            ds.frames.push_back(make_scene(spec));
            ds.intrinsics = spec.canonical_intrinsics();
            TrainConfig cfg;
            cfg.steps = steps;
            cfg.seed = seed;
            cfg.net.base_channels = 8;
            cfg.net.emb_dim = 32;
            return train_loop(ds, cfg).losses;
        },
        py::arg("steps") = 5, py::arg("size") = 16, py::arg("seed") = 0,
        "Tiny on-the-fly training run; returns the loss trace.");

    m.def(
        "init_checkpoint",
        [](const std::string& path, int base_channels, int T, std::uint64_t seed) {
            UNetConfig cfg;
            cfg.base_channels = base_channels;
            ModelBundle bundle;
            bundle.params = init_params(cfg, seed);
            bundle.schedule = build_linear_schedule(T, 1e-4, 0.02);
            save_checkpoint(path, bundle);
        },
        py::arg("path"), py::arg("base_channels") = 8, py::arg("T") = 10, py::arg("seed") = 0,
        "Write a freshly initialized checkpoint.");

    m.def(
        "checkpoint_info",
        [](const std::string& path) {
            const ModelBundle bundle = load_checkpoint(path);
            py::dict info;
            info["base_channels"] = bundle.params.config.base_channels;
            info["emb_dim"] = bundle.params.config.emb_dim;
            info["n_prompts"] = bundle.params.config.n_prompts;
            info["T"] = bundle.schedule.T;
            info["codec"] = codec_to_string(bundle.codec);
            info["n_params"] = count_params(bundle.params);
            return info;
        },
        py::arg("path"));

    m.def(
        "sample_rollout",
        [](const std::string& ckpt_path,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& rgb,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& depth,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& pose,
           int n_frames, double scale, std::uint64_t seed, bool composite) {
            const ModelBundle bundle = load_checkpoint(ckpt_path);
            RgbdFrame start;
            start.rgb = array_to_tensor(rgb);
            start.depth = array_to_depth(depth);
            start.validate();
            const std::vector<Pose> traj(static_cast<std::size_t>(n_frames),
                                         pose_from_array(pose));
            SamplerConfig cfg;
            cfg.guidance = scale;
            cfg.seed = seed;
            cfg.composite = composite;
            const Intrinsics k = Intrinsics::simple(start.width(), start.height());
            const VideoRollout rollout = sample_video(bundle, start, traj, k, cfg);
            py::list frames;
            for (const Tensor& f : rollout.frames) frames.append(tensor_to_array(f));
            return frames;
        },
        py::arg("ckpt_path"), py::arg("rgb"), py::arg("depth"), py::arg("pose"),
        py::arg("n_frames") = 1, py::arg("scale") = 1.0, py::arg("seed") = 0,
        py::arg("composite") = false,
        "Autoregressive rollout applying `pose` repeatedly; returns the rgb frames.");
}

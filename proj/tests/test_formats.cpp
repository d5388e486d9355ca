#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cyclediff/formats.hpp"
#include "cyclediff/io_image.hpp"
#include "cyclediff/scenes.hpp"

using namespace cyclediff;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("cyclediff_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("png round-trips quantized colors exactly") {
    TempDir tmp;
    Rng rng(3);
    Tensor rgb({3, 9, 7});
    // Quantized values survive the 8-bit file exactly.
    for (std::size_t i = 0; i < rgb.size(); ++i)
        rgb[i] = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;

    save_png(tmp.file("a.png"), rgb);
    const Tensor back = load_png(tmp.file("a.png"));
    REQUIRE(back.same_shape(rgb));
    CHECK(max_abs_diff(back, rgb) == 0.0);

    // Unquantized values land on the nearest step (round half up).
    Tensor odd({3, 1, 1});
    odd[0] = 0.5;  // 127.5 rounds up to 128
    odd[1] = 0.2;
    odd[2] = 1.0;
    save_png(tmp.file("b.png"), odd);
    const Tensor odd_back = load_png(tmp.file("b.png"));
    CHECK(odd_back[0] == 128.0 / 255.0);
    CHECK(odd_back[1] == 51.0 / 255.0);
    CHECK(odd_back[2] == 1.0);
}

TEST_CASE("mask png round-trips and thresholds at 128") {
    TempDir tmp;
    OcclusionMask m(6, 5, 0);
    m.at(0, 0) = 1;
    m.at(3, 2) = 1;
    m.at(5, 4) = 1;
    save_mask_png(tmp.file("m.png"), m);
    const OcclusionMask back = load_mask_png(tmp.file("m.png"));
    REQUIRE(back.height == 6);
    REQUIRE(back.width == 5);
    CHECK(back.values == m.values);

    // A color png loads as a mask through its first channel.
    Tensor rgb({3, 2, 2});
    rgb.fill(0.0);
    rgb.at(0, 0, 0) = 200.0 / 255.0;  // above threshold
    rgb.at(0, 0, 1) = 127.0 / 255.0;  // below
    save_png(tmp.file("c.png"), rgb);
    const OcclusionMask thresh = load_mask_png(tmp.file("c.png"));
    CHECK(thresh.at(0, 0) == 1);
    CHECK(thresh.at(0, 1) == 0);
}

TEST_CASE("pfm round-trips depth including the holes") {
    TempDir tmp;
    DepthMap d(4, 3);
    d.at(0, 0) = 1.5;
    d.at(1, 2) = 0.25;
    d.at(3, 1) = 1e6;
    save_pfm(tmp.file("d.pfm"), d);
    const DepthMap back = load_pfm(tmp.file("d.pfm"));
    REQUIRE(back.height == 4);
    REQUIRE(back.width == 3);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 3; ++x) {
            if (d.valid_at(y, x))
                CHECK(back.at(y, x) == d.at(y, x));
            else
                CHECK(!back.valid_at(y, x));
        }
}

TEST_CASE("a hand-built one-pixel pfm parses to its float") {
    TempDir tmp;
    std::ofstream out(tmp.file("one.pfm"), std::ios::binary);
    out << "Pf\n1 1\n-1.0\n";
    const float v = 2.5f;
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
    out.close();
    const DepthMap d = load_pfm(tmp.file("one.pfm"));
    REQUIRE(d.height == 1);
    REQUIRE(d.width == 1);
    CHECK(d.at(0, 0) == 2.5);
}

TEST_CASE("pfm loader rejects color and big-endian files") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("color.pfm"), std::ios::binary);
        out << "PF\n1 1\n-1.0\n";
        const float rgb[3] = {1, 2, 3};
        out.write(reinterpret_cast<const char*>(rgb), sizeof rgb);
    }
    CHECK_THROWS_AS(load_pfm(tmp.file("color.pfm")), IoError);
    {
        std::ofstream out(tmp.file("big.pfm"), std::ios::binary);
        out << "Pf\n1 1\n1.0\n";
        const float v = 2.5f;
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    CHECK_THROWS_AS(load_pfm(tmp.file("big.pfm")), IoError);
    CHECK_THROWS_AS(load_pfm(tmp.file("missing.pfm")), IoError);
}

TEST_CASE("malformed pngs raise io errors") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("junk.png"), std::ios::binary);
        out << "this is not a png";
    }
    CHECK_THROWS_AS(load_png(tmp.file("junk.png")), IoError);
    CHECK_THROWS_AS(load_png(tmp.file("nonexistent.png")), IoError);
}

TEST_CASE("checkpoints round-trip byte-identically") {
    TempDir tmp;
    UNetConfig net;
    net.base_channels = 8;
    net.emb_dim = 16;
    ModelBundle model;
    model.params = init_params(net, 11);
    // float32 payload: keep parameters exactly representable.
    Rng rng(13);
    for_each_param(model.params, [&](const std::string&, Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = static_cast<double>(static_cast<float>(rng.normal()));
    });
    model.schedule = build_linear_schedule(25, 1e-4, 0.02);
    model.codec = CodecKind::avgpool2;

    save_checkpoint(tmp.file("a.ckpt"), model);
    const ModelBundle back = load_checkpoint(tmp.file("a.ckpt"));
    CHECK(back.codec == CodecKind::avgpool2);
    CHECK(back.schedule.T == 25);
    CHECK(back.params.config.base_channels == 8);
    CHECK(back.params.config.emb_dim == 16);

    std::vector<const Tensor*> ta, tb;
    for_each_param(model.params, [&](const std::string&, const Tensor& t) { ta.push_back(&t); });
    for_each_param(back.params, [&](const std::string&, const Tensor& t) { tb.push_back(&t); });
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(max_abs_diff(*ta[i], *tb[i]) == 0.0);

    // Saving the loaded model reproduces the file bit for bit.
    save_checkpoint(tmp.file("b.ckpt"), back);
    CHECK(slurp(tmp.file("a.ckpt")) == slurp(tmp.file("b.ckpt")));
}

TEST_CASE("checkpoint flags survive the manifest") {
    TempDir tmp;
    UNetConfig net;
    net.base_channels = 8;
    net.emb_dim = 16;
    net.meb_skips = false;
    net.mask_modulation = false;
    ModelBundle model;
    model.params = init_params(net, 17);
    model.schedule = build_linear_schedule(10, 2e-4, 0.01);

    save_checkpoint(tmp.file("f.ckpt"), model);
    const ModelBundle back = load_checkpoint(tmp.file("f.ckpt"));
    CHECK(!back.params.config.meb_skips);
    CHECK(!back.params.config.mask_modulation);
    CHECK(back.schedule.beta(1) == doctest::Approx(2e-4).epsilon(1e-15));
    CHECK(back.schedule.beta(10) == doctest::Approx(0.01).epsilon(1e-15));
}

TEST_CASE("corrupt checkpoints raise io errors") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("bad.ckpt"), std::ios::binary);
        out << "NOTCKPT\n";
    }
    CHECK_THROWS_AS(load_checkpoint(tmp.file("bad.ckpt")), IoError);
    CHECK_THROWS_AS(load_checkpoint(tmp.file("absent.ckpt")), IoError);

    // Truncated payload.
    UNetConfig net;
    net.base_channels = 8;
    net.emb_dim = 16;
    ModelBundle model;
    model.params = init_params(net, 1);
    model.schedule = build_linear_schedule(10, 1e-4, 0.02);
    save_checkpoint(tmp.file("t.ckpt"), model);
    const std::vector<char> bytes = slurp(tmp.file("t.ckpt"));
    {
        std::ofstream out(tmp.file("t.ckpt"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
    }
    CHECK_THROWS_AS(load_checkpoint(tmp.file("t.ckpt")), IoError);
}

TEST_CASE("trajectories round-trip through json") {
    TempDir tmp;
    Trajectory traj;
    traj.intrinsics = Intrinsics::simple(32, 32);
    Rng rng(19);
    traj.poses.push_back(Pose::identity());
    traj.poses.push_back(Pose::translate(0.05, -0.02, 0.01));
    traj.poses.push_back(pose_compose(Pose::rotate_xyz(0.02, -0.01, 0.03),
                                      Pose::translate(-0.03, 0.0, 0.02)));

    save_trajectory(tmp.file("t.json"), traj);
    const Trajectory back = load_trajectory(tmp.file("t.json"));
    CHECK(back.intrinsics.fx == traj.intrinsics.fx);
    CHECK(back.intrinsics.cx == traj.intrinsics.cx);
    CHECK(back.intrinsics.width == 32);
    REQUIRE(back.poses.size() == traj.poses.size());
    for (std::size_t i = 0; i < traj.poses.size(); ++i) {
        CHECK((back.poses[i].rotation - traj.poses[i].rotation).cwiseAbs().maxCoeff() < 1e-15);
        CHECK((back.poses[i].translation - traj.poses[i].translation).cwiseAbs().maxCoeff() <
              1e-15);
    }
}

TEST_CASE("trajectory loader rejects malformed files") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("bad.json"));
        out << "{ not json";
    }
    CHECK_THROWS_AS(load_trajectory(tmp.file("bad.json")), IoError);
    {
        std::ofstream out(tmp.file("badpose.json"));
        out << R"({"intrinsics":{"fx":32,"fy":32,"cx":15.5,"cy":15.5,"width":32,"height":32},)"
            << R"("poses":[[1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,2]]})";  // bottom row broken
    }
    CHECK_THROWS_AS(load_trajectory(tmp.file("badpose.json")), IoError);
    CHECK_THROWS_AS(load_trajectory(tmp.file("absent.json")), IoError);
}

TEST_CASE("pair directories round-trip the stored pairs in order") {
    TempDir tmp;
    const SceneSpec spec = SceneSpec::two_plane(16, 23);
    const RgbdFrame frame = make_scene(spec);
    Rng rng(29);
    const PoseSampleConfig pc = PoseSampleConfig::nearby(frame);

    std::vector<TrainingPair> pairs;
    for (int i = 0; i < 3; ++i) {
        const Pose pose = sample_pose(pc, rng);
        TrainingPair p = cycle_render(frame, pose, spec.canonical_intrinsics(), i % 2);
        // Quantize so the 8-bit files are lossless.
        for (std::size_t j = 0; j < p.cond.frame.rgb.size(); ++j)
            p.cond.frame.rgb[j] = std::round(p.cond.frame.rgb[j] * 255.0) / 255.0;
        for (std::size_t j = 0; j < p.target.rgb.size(); ++j)
            p.target.rgb[j] = std::round(p.target.rgb[j] * 255.0) / 255.0;
        PairMeta meta;
        meta.pose = pose;
        meta.seed = static_cast<std::uint64_t>(100 + i);
        meta.prompt_id = p.prompt_id;
        save_pair(tmp.path.string(), i, p, meta);
        pairs.push_back(std::move(p));
    }

    const std::vector<StoredPair> back = load_pairs(tmp.path.string());
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) {
        const StoredPair& s = back[static_cast<std::size_t>(i)];
        CHECK(s.meta.seed == static_cast<std::uint64_t>(100 + i));
        CHECK(s.meta.prompt_id == i % 2);
        CHECK(s.meta.source == "cycle");
        CHECK(s.pair.prompt_id == i % 2);
        CHECK(max_abs_diff(s.pair.target.rgb, pairs[static_cast<std::size_t>(i)].target.rgb) ==
              0.0);
        CHECK(max_abs_diff(s.pair.cond.frame.rgb,
                           pairs[static_cast<std::size_t>(i)].cond.frame.rgb) == 0.0);
        CHECK(s.pair.cond.mask.values == pairs[static_cast<std::size_t>(i)].cond.mask.values);
    }

    CHECK_THROWS_AS(load_pairs((tmp.path / "no_such_dir").string()), IoError);
}

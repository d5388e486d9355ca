#include "cyclediff/formats.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cyclediff/io_image.hpp"

namespace cyclediff {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed json in " + path + ": " + e.what());
    }
    return j;
}

json pose_to_json(const Pose& p) {
    json m = json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m.push_back(p.rotation(r, c));
        m.push_back(p.translation(r));
    }
    for (double v : {0.0, 0.0, 0.0, 1.0}) m.push_back(v);
    return m;
}

Pose pose_from_json(const json& m, const std::string& path) {
    if (!m.is_array() || m.size() != 16)
        throw IoError("pose must be a 16-number row-major 4x4 matrix: " + path);
    Pose p;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) p.rotation(r, c) = m[static_cast<std::size_t>(4 * r + c)];
        p.translation(r) = m[static_cast<std::size_t>(4 * r + 3)];
    }
    for (int c = 0; c < 4; ++c) {
        const double v = m[static_cast<std::size_t>(12 + c)].get<double>();
        if (std::abs(v - (c == 3 ? 1.0 : 0.0)) > 1e-9)
            throw IoError("pose bottom row must be 0 0 0 1: " + path);
    }
    try {
        p.validate(1e-6);
    } catch (const Error& e) {
        throw IoError("invalid pose in " + path + ": " + e.what());
    }
    return p;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out << text;
    if (!out) throw IoError("failed to write file: " + path);
}

}  // namespace

Trajectory load_trajectory(const std::string& path) {
    const json j = load_json_file(path);
    try {
        Trajectory traj;
        const json& k = j.at("intrinsics");
        traj.intrinsics.fx = k.at("fx");
        traj.intrinsics.fy = k.at("fy");
        traj.intrinsics.cx = k.at("cx");
        traj.intrinsics.cy = k.at("cy");
        traj.intrinsics.width = k.at("width");
        traj.intrinsics.height = k.at("height");
        traj.intrinsics.validate();
        for (const json& m : j.at("poses")) traj.poses.push_back(pose_from_json(m, path));
        return traj;
    } catch (const json::exception& e) {
        throw IoError("malformed trajectory " + path + ": " + e.what());
    } catch (const Error& e) {
        throw IoError("invalid trajectory " + path + ": " + e.what());
    }
}

void save_trajectory(const std::string& path, const Trajectory& traj) {
    json j;
    j["intrinsics"] = {{"fx", traj.intrinsics.fx}, {"fy", traj.intrinsics.fy},
                       {"cx", traj.intrinsics.cx}, {"cy", traj.intrinsics.cy},
                       {"width", traj.intrinsics.width}, {"height", traj.intrinsics.height}};
    j["poses"] = json::array();
    for (const Pose& p : traj.poses) j["poses"].push_back(pose_to_json(p));
    write_text_file(path, j.dump(2) + "\n");
}

namespace {

constexpr char kCheckpointMagic[6] = {'C', 'Y', 'C', 'L', '1', '\n'};

}  // namespace

void save_checkpoint(const std::string& path, const ModelBundle& model) {
    model.schedule.validate();
    std::vector<std::pair<std::string, const Tensor*>> entries;
    for_each_param(model.params, [&](const std::string& name, const Tensor& t) {
        entries.emplace_back(name, &t);
    });

    json manifest;
    manifest["codec"] = codec_to_string(model.codec);
    manifest["net"] = {{"base_channels", model.params.config.base_channels},
                       {"emb_dim", model.params.config.emb_dim},
                       {"n_prompts", model.params.config.n_prompts},
                       {"meb_skips", model.params.config.meb_skips},
                       {"mask_modulation", model.params.config.mask_modulation}};
    manifest["schedule"] = {{"T", model.schedule.T},
                            {"beta_start", model.schedule.beta(1)},
                            {"beta_end", model.schedule.beta(model.schedule.T)}};
    manifest["params"] = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : entries) {
        manifest["params"].push_back(
            {{"name", name}, {"shape", tensor->shape()}, {"offset", offset}});
        offset += tensor->size() * sizeof(float);
    }

    const std::string header = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t header_len = header.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<float> buf;
    for (const auto& [name, tensor] : entries) {
        buf.resize(tensor->size());
        for (std::size_t i = 0; i < tensor->size(); ++i)
            buf[i] = static_cast<float>((*tensor)[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed to write checkpoint: " + path);
}

ModelBundle load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[6];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw IoError("not a checkpoint file: " + path);
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || header_len == 0 || header_len > (1u << 20))
        throw IoError("malformed checkpoint header: " + path);
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError("truncated checkpoint header: " + path);

    json manifest;
    try {
        manifest = json::parse(header);
    } catch (const json::exception& e) {
        throw IoError("malformed checkpoint manifest in " + path + ": " + e.what());
    }

    ModelBundle model;
    try {
        const json& net = manifest.at("net");
        UNetConfig cfg;
        cfg.base_channels = net.at("base_channels");
        cfg.emb_dim = net.at("emb_dim");
        cfg.n_prompts = net.at("n_prompts");
        cfg.meb_skips = net.at("meb_skips");
        cfg.mask_modulation = net.at("mask_modulation");
        cfg.validate();
        model.params = init_params(cfg, 0);

        const json& sched = manifest.at("schedule");
        model.schedule = build_linear_schedule(sched.at("T"), sched.at("beta_start"),
                                               sched.at("beta_end"));
        model.codec = codec_from_string(manifest.at("codec"));

        std::vector<std::pair<std::string, Tensor*>> entries;
        for_each_param(model.params, [&](const std::string& name, Tensor& t) {
            entries.emplace_back(name, &t);
        });
        const json& params = manifest.at("params");
        if (params.size() != entries.size())
            throw IoError("checkpoint tensor directory does not match the net config: " + path);
        std::uint64_t expected_offset = 0;
        std::vector<float> buf;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const json& entry = params[i];
            Tensor* tensor = entries[i].second;
            if (entry.at("name") != entries[i].first ||
                entry.at("shape").get<std::vector<int>>() != tensor->shape() ||
                entry.at("offset").get<std::uint64_t>() != expected_offset)
                throw IoError("checkpoint tensor directory does not match the net config: " + path);
            buf.resize(tensor->size());
            in.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(float)));
            if (!in) throw IoError("truncated checkpoint payload: " + path);
            for (std::size_t k = 0; k < buf.size(); ++k) (*tensor)[k] = static_cast<double>(buf[k]);
            expected_offset += tensor->size() * sizeof(float);
        }
    } catch (const json::exception& e) {
        throw IoError("malformed checkpoint manifest in " + path + ": " + e.what());
    } catch (const ConfigError& e) {
        throw IoError("invalid checkpoint config in " + path + ": " + e.what());
    }
    return model;
}

namespace {

std::string pair_dir_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pair_%04d", index);
    return buf;
}

}  // namespace

void save_pair(const std::string& dir, int index, const TrainingPair& pair, const PairMeta& meta) {
    if (index < 0) throw ConfigError("save_pair: index must be >= 0");
    const fs::path base = fs::path(dir) / pair_dir_name(index);
    std::error_code ec;
    fs::create_directories(base, ec);
    if (ec) throw IoError("cannot create pair directory: " + base.string());

    save_png((base / "cond.png").string(), pair.cond.frame.rgb);
    save_mask_png((base / "mask.png").string(), pair.cond.mask);
    save_png((base / "target.png").string(), pair.target.rgb);

    json j;
    j["pose"] = pose_to_json(meta.pose);
    j["prompt_id"] = pair.prompt_id;
    j["seed"] = meta.seed;
    j["source"] = meta.source;
    write_text_file((base / "meta.json").string(), j.dump(2) + "\n");
}

std::vector<StoredPair> load_pairs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("pair directory does not exist: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_directory() && name.rfind("pair_", 0) == 0) names.push_back(name);
    }
    std::sort(names.begin(), names.end());

    std::vector<StoredPair> pairs;
    pairs.reserve(names.size());
    for (const std::string& name : names) {
        const fs::path base = fs::path(dir) / name;
        StoredPair stored;
        Tensor cond_rgb = load_png((base / "cond.png").string());
        OcclusionMask mask = load_mask_png((base / "mask.png").string());
        Tensor target_rgb = load_png((base / "target.png").string());
        if (cond_rgb.dim(1) != mask.height || cond_rgb.dim(2) != mask.width ||
            !cond_rgb.same_shape(target_rgb))
            throw IoError("pair images disagree on size: " + base.string());

        const int height = mask.height;
        const int width = mask.width;
        stored.pair.cond.frame = RgbdFrame(height, width);
        stored.pair.cond.frame.rgb = std::move(cond_rgb);
        stored.pair.cond.mask = std::move(mask);
        stored.pair.target = RgbdFrame(height, width);
        stored.pair.target.rgb = std::move(target_rgb);

        const json meta = load_json_file((base / "meta.json").string());
        try {
            stored.meta.pose = pose_from_json(meta.at("pose"), base.string());
            stored.pair.prompt_id = meta.at("prompt_id");
            stored.meta.prompt_id = stored.pair.prompt_id;
            stored.meta.seed = meta.at("seed");
            stored.meta.source = meta.value("source", "cycle");
        } catch (const json::exception& e) {
            throw IoError("malformed pair meta in " + base.string() + ": " + e.what());
        }
        pairs.push_back(std::move(stored));
    }
    return pairs;
}

}  // namespace cyclediff

#include "cyclediff/scenes.hpp"

#include <cmath>

#include "cyclediff/rng.hpp"

namespace cyclediff {

namespace {

double hash_unit(std::uint64_t seed, int plane, int channel, int octave, long ix, long iy) {
    std::uint64_t h = mix64(seed ^ 0x8a5cd789635d2dffULL);
    h = mix64(h ^ (static_cast<std::uint64_t>(plane) * 0x9e3779b97f4a7c15ULL + 1));
    h = mix64(h ^ (static_cast<std::uint64_t>(channel) * 0xbf58476d1ce4e5b9ULL + 2));
    h = mix64(h ^ (static_cast<std::uint64_t>(octave) * 0x94d049bb133111ebULL + 3));
    h = mix64(h ^ (static_cast<std::uint64_t>(ix) * 0xd6e8feb86659fd93ULL + 4));
    h = mix64(h ^ (static_cast<std::uint64_t>(iy) * 0xff51afd7ed558ccdULL + 5));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, int plane, int channel, int octave, double u, double v) {
    const double fu = std::floor(u), fv = std::floor(v);
    const long iu = static_cast<long>(fu), iv = static_cast<long>(fv);
    const double tu = fade(u - fu), tv = fade(v - fv);
    const double a = hash_unit(seed, plane, channel, octave, iu, iv);
    const double b = hash_unit(seed, plane, channel, octave, iu + 1, iv);
    const double c = hash_unit(seed, plane, channel, octave, iu, iv + 1);
    const double d = hash_unit(seed, plane, channel, octave, iu + 1, iv + 1);
    return (1 - tv) * ((1 - tu) * a + tu * b) + tv * ((1 - tu) * c + tu * d);
}

// Continuous plane color. The lattice spacing is tied to world units so the
// texture is a property of the surface, not of any particular view; the base
// wavelength spans half the source image, with two finer octaves. Contrast
// is kept moderate so sub-pixel resampling stays within the splat-rounding
// tolerance used by the oracle comparisons.
double plane_color(const SceneSpec& spec, int plane, int channel, double wx, double wy,
                   double depth) {
    const double base = 0.5 * depth;  // (size/2) pixels at the canonical focal length
    double acc = 0.0;
    double amp = 4.0;
    double total = 0.0;
    for (int o = 0; o < 3; ++o) {
        const double cell = base / (1 << o);
        acc += amp * value_noise(spec.texture_seed, plane, channel, o, wx / cell, wy / cell);
        total += amp;
        amp *= 0.5;
    }
    const double n = acc / total;  // in [0, 1]
    return 0.5 + 0.5 * (n - 0.5);
}

struct Hit {
    bool valid = false;
    double lambda = 0.0;
    int plane = 0;
    Vec3 point{0, 0, 0};
};

}  // namespace

SceneSpec SceneSpec::constant(int size, std::uint64_t seed, double depth) {
    SceneSpec s;
    s.kind = Kind::constant_plane;
    s.size = size;
    s.bg_depth = depth;
    s.fg_depth = 0.5 * depth;
    s.square = size / 2;
    s.texture_seed = seed;
    return s;
}

SceneSpec SceneSpec::two_plane(int size, std::uint64_t seed) {
    SceneSpec s;
    s.kind = Kind::two_plane;
    s.size = size;
    s.fg_depth = 1.0;
    s.bg_depth = 2.0;
    s.square = size / 2;
    s.texture_seed = seed;
    return s;
}

void SceneSpec::validate() const {
    if (size < 8) throw ConfigError("scene size must be at least 8");
    if (!(fg_depth > 0.0) || !(bg_depth > fg_depth))
        throw ConfigError("scene depths must satisfy 0 < foreground < background");
    if (square < 1 || square >= size) throw ConfigError("square extent must be inside the image");
}

MaskedFrame ground_truth_view(const SceneSpec& spec, const Pose& pose, const Intrinsics& k) {
    spec.validate();
    k.validate();
    pose.validate();

    const Intrinsics kc = spec.canonical_intrinsics();
    const Mat3 rt = pose.rotation.transpose();
    const Vec3 center = -(rt * pose.translation);  // target camera center in source coords

    // Foreground square bounds in world units (pixel footprint, not centers).
    const int lo = (spec.size - spec.square) / 2;
    const int hi = lo + spec.square;
    const double fx0 = (lo - 0.5 - kc.cx) * spec.fg_depth / kc.fx;
    const double fx1 = (hi - 0.5 - kc.cx) * spec.fg_depth / kc.fx;
    const double fy0 = (lo - 0.5 - kc.cy) * spec.fg_depth / kc.fy;
    const double fy1 = (hi - 0.5 - kc.cy) * spec.fg_depth / kc.fy;

    MaskedFrame out(k.height, k.width);
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            const Vec3 dir_t((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
            const Vec3 dir = rt * dir_t;

            Hit best;
            auto consider = [&](double depth, int plane, bool bounded) {
                if (std::abs(dir.z()) < 1e-12) return;
                const double lambda = (depth - center.z()) / dir.z();
                if (lambda <= 1e-9) return;
                const Vec3 p = center + lambda * dir;
                if (bounded &&
                    !(p.x() >= fx0 && p.x() < fx1 && p.y() >= fy0 && p.y() < fy1))
                    return;
                if (!best.valid || lambda < best.lambda) best = {true, lambda, plane, p};
            };
            if (spec.kind == SceneSpec::Kind::two_plane) consider(spec.fg_depth, 1, true);
            consider(spec.bg_depth, 0, false);

            bool known = best.valid && best.point.z() > 0.0;
            if (known) {
                // Inside the source footprint, padded by one pixel for splat
                // rounding at the image border.
                const double u = kc.fx * best.point.x() / best.point.z() + kc.cx;
                const double v = kc.fy * best.point.y() / best.point.z() + kc.cy;
                known = u >= -1.5 && u <= spec.size + 0.5 && v >= -1.5 && v <= spec.size + 0.5;
            }
            if (!known) continue;

            const double depth_at =
                best.plane == 1 ? spec.fg_depth : spec.bg_depth;
            for (int c = 0; c < 3; ++c)
                out.frame.rgb.at(c, y, x) =
                    plane_color(spec, best.plane, c, best.point.x(), best.point.y(), depth_at);
            out.frame.depth.at(y, x) = best.lambda;  // hit depth in the target camera
            out.mask.at(y, x) = 1;
        }
    }
    return out;
}

RgbdFrame make_scene(const SceneSpec& spec) {
    const MaskedFrame view =
        ground_truth_view(spec, Pose::identity(), spec.canonical_intrinsics());
    if (!view.mask.all_known()) throw ConfigError("scene rendering left unknown pixels");
    return view.frame;
}

double psnr(const Tensor& a, const Tensor& b, const OcclusionMask* mask) {
    check_same_shape(a, b, "psnr");
    if (a.rank() != 3) throw DimensionError("psnr: expected (C, H, W)");
    double sum = 0.0;
    std::size_t n = 0;
    if (mask) {
        if (mask->height != a.dim(1) || mask->width != a.dim(2))
            throw DimensionError("psnr: mask size mismatch");
        for (int c = 0; c < a.dim(0); ++c)
            for (int y = 0; y < a.dim(1); ++y)
                for (int x = 0; x < a.dim(2); ++x) {
                    if (!mask->at(y, x)) continue;
                    const double d = a.at(c, y, x) - b.at(c, y, x);
                    sum += d * d;
                    ++n;
                }
        if (n == 0) throw ConfigError("psnr: mask selects no pixels");
    } else {
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - b[i];
            sum += d * d;
        }
        n = a.size();
    }
    const double mse = sum / static_cast<double>(n);
    if (mse < 1e-10) return 99.0;
    return -10.0 * std::log10(mse);
}

double ssim(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "ssim");
    if (a.rank() != 3) throw DimensionError("ssim: expected (C, H, W)");
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    constexpr int kWin = 8, kStride = 4;
    if (h < kWin || w < kWin) throw DimensionError("ssim: image smaller than the 8x8 window");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    constexpr double inv_n = 1.0 / (kWin * kWin);

    double total = 0.0;
    std::size_t windows = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int wy = 0; wy + kWin <= h; wy += kStride) {
            for (int wx = 0; wx + kWin <= w; wx += kStride) {
                double ma = 0, mb = 0;
                for (int y = 0; y < kWin; ++y)
                    for (int x = 0; x < kWin; ++x) {
                        ma += a.at(ch, wy + y, wx + x);
                        mb += b.at(ch, wy + y, wx + x);
                    }
                ma *= inv_n;
                mb *= inv_n;
                double va = 0, vb = 0, cov = 0;
                for (int y = 0; y < kWin; ++y)
                    for (int x = 0; x < kWin; ++x) {
                        const double da = a.at(ch, wy + y, wx + x) - ma;
                        const double db = b.at(ch, wy + y, wx + x) - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va *= inv_n;
                vb *= inv_n;
                cov *= inv_n;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++windows;
            }
        }
    }
    return total / static_cast<double>(windows);
}

Tensor mean_fill_baseline(const MaskedFrame& rendered) {
    const Tensor& rgb = rendered.frame.rgb;
    const OcclusionMask& m = rendered.mask;
    if (m.count_known() == 0) throw ConfigError("mean_fill_baseline: no known pixels");
    double mean[3] = {0, 0, 0};
    std::size_t n = 0;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            for (int c = 0; c < 3; ++c) mean[c] += rgb.at(c, y, x);
            ++n;
        }
    for (double& v : mean) v /= static_cast<double>(n);

    Tensor out = rgb;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (m.at(y, x)) continue;
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = mean[c];
        }
    return out;
}

}  // namespace cyclediff

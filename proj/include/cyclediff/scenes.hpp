#pragma once

#include <cstdint>

#include "cyclediff/geometry.hpp"
#include "cyclediff/image.hpp"
#include "cyclediff/tensor.hpp"

namespace cyclediff {

// Procedural test scenes with exact analytic novel views. Geometry lives in
// the source camera frame: fronto-parallel planes textured with seeded
// band-limited value noise, so any continuous surface point has a
// well-defined color and every target view can be ray-cast exactly.
struct SceneSpec {
    enum class Kind { constant_plane, two_plane };
    Kind kind = Kind::two_plane;
    int size = 64;             // square image extent in pixels
    double fg_depth = 1.0;     // raised square (two_plane only)
    double bg_depth = 2.0;
    std::uint64_t texture_seed = 0;
    int square = 32;           // centered foreground square extent in pixels

    static SceneSpec constant(int size, std::uint64_t seed, double depth = 2.0);
    static SceneSpec two_plane(int size, std::uint64_t seed);

    Intrinsics canonical_intrinsics() const { return Intrinsics::simple(size, size); }
    void validate() const;
};

RgbdFrame make_scene(const SceneSpec& spec);

// Exact novel view: each target pixel's ray is intersected with the planes
// analytically. mask = 1 where the nearest hit lies within the source
// camera's padded footprint (one pixel of slack for splat rounding).
MaskedFrame ground_truth_view(const SceneSpec& spec, const Pose& pose, const Intrinsics& k);

// Peak signal-to-noise ratio in dB against peak 1.0, optionally restricted
// to mask = 1 pixels. Returns the 99 dB sentinel when MSE < 1e-10.
double psnr(const Tensor& a, const Tensor& b, const OcclusionMask* mask = nullptr);

// Mean SSIM over 8x8 windows with stride 4, averaged across channels.
double ssim(const Tensor& a, const Tensor& b);

// Fills mask = 0 pixels with the mean color of the known pixels.
Tensor mean_fill_baseline(const MaskedFrame& rendered);

}  // namespace cyclediff

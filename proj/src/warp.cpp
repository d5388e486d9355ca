#include "cyclediff/warp.hpp"

#include <cmath>
#include <limits>

namespace cyclediff {

namespace {

void check_frame_matches(const RgbdFrame& f, const Intrinsics& k) {
    if (f.rgb.rank() != 3 || f.rgb.dim(0) != 3)
        throw DimensionError("forward_warp: rgb must be (3,H,W)");
    if (f.rgb.dim(1) != f.depth.height || f.rgb.dim(2) != f.depth.width)
        throw DimensionError("forward_warp: rgb and depth sizes differ");
    if (f.depth.height != k.height || f.depth.width != k.width)
        throw DimensionError("forward_warp: frame size does not match intrinsics");
}

}  // namespace

MaskedFrame forward_warp(const RgbdFrame& src, const Pose& t, const Intrinsics& k) {
    k.validate();
    t.validate();
    check_frame_matches(src, k);

    const int h = src.height();
    const int w = src.width();

    MaskedFrame out;
    out.frame = RgbdFrame(h, w);
    out.mask = OcclusionMask(h, w, 0);

    std::vector<double> zbuf(static_cast<std::size_t>(h) * w,
                             std::numeric_limits<double>::infinity());

    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            const double d = src.depth.at(v, u);
            if (!std::isfinite(d)) continue;

            const Point3 p = unproject(static_cast<double>(u), static_cast<double>(v), d, k);
            const Point3 q = transform(t, p);
            if (!(q.z > 0.0)) continue;  // behind the camera

            const Projected pr = project(q, k);
            const int ui = static_cast<int>(std::floor(pr.u + 0.5));
            const int vi = static_cast<int>(std::floor(pr.v + 0.5));
            if (ui < 0 || ui >= w || vi < 0 || vi >= h) continue;

            double& z = zbuf[static_cast<std::size_t>(vi) * w + ui];
            if (pr.z < z) {  // strict: first writer wins on ties
                z = pr.z;
                out.frame.depth.at(vi, ui) = pr.z;
                out.frame.rgb.at(0, vi, ui) = src.rgb.at(0, v, u);
                out.frame.rgb.at(1, vi, ui) = src.rgb.at(1, v, u);
                out.frame.rgb.at(2, vi, ui) = src.rgb.at(2, v, u);
                out.mask.at(vi, ui) = 1;
            }
        }
    }
    return out;
}

MaskedFrame apply_mask(const RgbdFrame& f, const OcclusionMask& m) {
    if (f.height() != m.height || f.width() != m.width)
        throw DimensionError("apply_mask: frame and mask sizes differ");

    MaskedFrame out;
    out.frame = f;
    out.mask = m;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            if (m.at(y, x)) continue;
            out.frame.rgb.at(0, y, x) = 0.0;
            out.frame.rgb.at(1, y, x) = 0.0;
            out.frame.rgb.at(2, y, x) = 0.0;
            out.frame.depth.at(y, x) = DepthMap::invalid();
        }
    }
    return out;
}

}  // namespace cyclediff

#pragma once

#include "cyclediff/geometry.hpp"
#include "cyclediff/image.hpp"

namespace cyclediff {

// Forward point splatting with a z-buffer. Every source pixel with valid
// depth is unprojected, moved by `t`, reprojected, and splatted onto its
// nearest target pixel (round half up on both axes). The z-buffer keeps the
// strictly smallest depth; exact ties go to the first writer in source
// row-major order. Splats behind the camera or outside the image are
// dropped. Target pixels that receive nothing come back with mask = 0,
// zero rgb and invalid depth.
MaskedFrame forward_warp(const RgbdFrame& src, const Pose& t, const Intrinsics& k);

// Zeroes rgb and invalidates depth wherever m = 0; the mask rides along.
MaskedFrame apply_mask(const RgbdFrame& f, const OcclusionMask& m);

}  // namespace cyclediff

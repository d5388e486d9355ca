#pragma once

#include <string>

#include "cyclediff/image.hpp"
#include "cyclediff/tensor.hpp"

namespace cyclediff {

// Latent codec standing between pixel space and the denoiser. The identity
// codec keeps the spatial size and maps [0,1] color to [-1,1]; the avgpool2
// codec additionally halves the resolution with a 2x2 mean and restores it
// with nearest upsampling.
enum class CodecKind { identity, avgpool2 };

CodecKind codec_from_string(const std::string& name);
std::string codec_to_string(CodecKind kind);

// (3, H, W) rgb in [0,1] -> latent.
Tensor encode_rgb(const Tensor& rgb, CodecKind kind);

// Latent -> (3, H, W) rgb clamped to [0,1]. Pixel dimensions are needed to
// undo the avgpool2 halving exactly.
Tensor decode_rgb(const Tensor& z, CodecKind kind, int height, int width);

// Occlusion mask -> (1, h, w) tensor at the codec's latent resolution.
Tensor encode_mask(const OcclusionMask& mask, CodecKind kind);

int latent_extent(int pixels, CodecKind kind);

}  // namespace cyclediff

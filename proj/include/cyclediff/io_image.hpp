#pragma once

#include <string>

#include "cyclediff/image.hpp"
#include "cyclediff/tensor.hpp"

namespace cyclediff {

// 8-bit PNG color images. Values are mapped linearly between [0,1] doubles
// and 0..255 bytes (round half up on save, divide by 255 on load); no gamma
// handling. Grayscale files load as three identical channels.
void save_png(const std::string& path, const Tensor& rgb);
Tensor load_png(const std::string& path);

// 8-bit grayscale PNG masks: known = 255, hole = 0 on save; any value >= 128
// counts as known on load.
void save_mask_png(const std::string& path, const OcclusionMask& mask);
OcclusionMask load_mask_png(const std::string& path);

// Grayscale PFM ("Pf", float32, little-endian, bottom-up rows). Invalid
// depth round-trips as NaN.
void save_pfm(const std::string& path, const DepthMap& depth);
DepthMap load_pfm(const std::string& path);

}  // namespace cyclediff

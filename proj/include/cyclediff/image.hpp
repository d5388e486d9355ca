#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "cyclediff/errors.hpp"
#include "cyclediff/tensor.hpp"

namespace cyclediff {

// Per-pixel depth in scene units. Holes carry a quiet NaN.
struct DepthMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    DepthMap() = default;
    DepthMap(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, invalid()) {}

    static constexpr double invalid() { return std::numeric_limits<double>::quiet_NaN(); }

    double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    bool valid_at(int y, int x) const { return std::isfinite(at(y, x)); }

    // Median over valid pixels; throws when every pixel is a hole.
    double median_valid() const {
        std::vector<double> vals;
        vals.reserve(values.size());
        for (double v : values)
            if (std::isfinite(v)) vals.push_back(v);
        if (vals.empty()) throw InvalidDepthError("depth map has no valid pixels");
        const std::size_t mid = vals.size() / 2;
        std::nth_element(vals.begin(), vals.begin() + mid, vals.end());
        return vals[mid];
    }

    // Every valid entry must be finite and > 0.
    void validate() const {
        for (double v : values)
            if (std::isfinite(v) && v <= 0.0)
                throw InvalidDepthError("depth map contains non-positive depth");
    }
};

// Binary validity grid; 1 = known pixel, 0 = occluded / hole.
struct OcclusionMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;

    OcclusionMask() = default;
    OcclusionMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

    std::size_t count_known() const {
        std::size_t n = 0;
        for (std::uint8_t v : values) n += v ? 1 : 0;
        return n;
    }
    bool all_known() const { return count_known() == values.size(); }
    double hole_fraction() const {
        return 1.0 - static_cast<double>(count_known()) / static_cast<double>(values.size());
    }
};

// RGB in [0,1] stored planar as (3,H,W) plus matching depth.
struct RgbdFrame {
    Tensor rgb;
    DepthMap depth;

    RgbdFrame() = default;
    RgbdFrame(int h, int w) : rgb({3, h, w}), depth(h, w) {}

    int height() const { return depth.height; }
    int width() const { return depth.width; }

    void validate() const {
        if (rgb.rank() != 3 || rgb.dim(0) != 3 || rgb.dim(1) != depth.height ||
            rgb.dim(2) != depth.width)
            throw DimensionError("rgbd frame: rgb and depth sizes differ");
        for (std::size_t i = 0; i < rgb.size(); ++i)
            if (!(rgb[i] >= 0.0 && rgb[i] <= 1.0))
                throw ConfigError("rgbd frame: rgb values must lie in [0,1]");
        depth.validate();
    }
};

// Frame whose rgb is zero and depth invalid wherever mask = 0.
struct MaskedFrame {
    RgbdFrame frame;
    OcclusionMask mask;

    MaskedFrame() = default;
    MaskedFrame(int h, int w) : frame(h, w), mask(h, w, 0) {}

    int height() const { return mask.height; }
    int width() const { return mask.width; }
};

}  // namespace cyclediff

#include "cyclediff/codec.hpp"

#include "cyclediff/net.hpp"

namespace cyclediff {

CodecKind codec_from_string(const std::string& name) {
    if (name == "identity") return CodecKind::identity;
    if (name == "avgpool2") return CodecKind::avgpool2;
    throw ConfigError("unknown codec: " + name);
}

std::string codec_to_string(CodecKind kind) {
    return kind == CodecKind::identity ? "identity" : "avgpool2";
}

int latent_extent(int pixels, CodecKind kind) {
    if (kind == CodecKind::identity) return pixels;
    if (pixels % 2 != 0) throw DimensionError("avgpool2 codec needs even image sizes");
    return pixels / 2;
}

Tensor encode_rgb(const Tensor& rgb, CodecKind kind) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw DimensionError("encode_rgb: expected (3, H, W)");
    Tensor z(rgb.shape());
    for (std::size_t i = 0; i < rgb.size(); ++i) z[i] = 2.0 * rgb[i] - 1.0;
    if (kind == CodecKind::identity) return z;

    const int h = latent_extent(rgb.dim(1), kind);
    const int w = latent_extent(rgb.dim(2), kind);
    Tensor out({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at(c, y, x) = 0.25 * (z.at(c, 2 * y, 2 * x) + z.at(c, 2 * y, 2 * x + 1) +
                                          z.at(c, 2 * y + 1, 2 * x) + z.at(c, 2 * y + 1, 2 * x + 1));
    return out;
}

Tensor decode_rgb(const Tensor& z, CodecKind kind, int height, int width) {
    if (z.rank() != 3 || z.dim(0) != 3) throw DimensionError("decode_rgb: expected (3, h, w)");
    if (z.dim(1) != latent_extent(height, kind) || z.dim(2) != latent_extent(width, kind))
        throw DimensionError("decode_rgb: latent size does not match the image size");
    const Tensor full = kind == CodecKind::identity ? z : upsample_nearest2(z);
    Tensor rgb(full.shape());
    for (std::size_t i = 0; i < full.size(); ++i) {
        double v = 0.5 * (full[i] + 1.0);
        rgb[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
    return rgb;
}

Tensor encode_mask(const OcclusionMask& mask, CodecKind kind) {
    Tensor m({1, mask.height, mask.width});
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            m.at(0, y, x) = mask.at(y, x) ? 1.0 : 0.0;
    if (kind == CodecKind::identity) return m;
    return resize_nearest(m, latent_extent(mask.height, kind), latent_extent(mask.width, kind));
}

}  // namespace cyclediff

#include "cyclediff/io_image.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace cyclediff {

static_assert(std::endian::native == std::endian::little,
              "file readers assume a little-endian host");

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v) {
    const double scaled = std::floor(v * 255.0 + 0.5);
    return static_cast<std::uint8_t>(scaled < 0.0 ? 0.0 : (scaled > 255.0 ? 255.0 : scaled));
}

// Reads any 8-bit PNG into interleaved rows of `channels` bytes (1 or 3).
std::vector<std::uint8_t> read_png_bytes(const std::string& path, int& width, int& height,
                                         int& channels) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open png for reading: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng: failed to allocate read struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng: failed to allocate info struct");
    }
    std::vector<std::uint8_t> data;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("malformed png: " + path);
    }
    png_init_io(png, file.get());
    png_read_info(png, info);

    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (bit_depth == 16) png_set_strip_16(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported png channel layout: " + path);
    }

    data.resize(static_cast<std::size_t>(width) * height * channels);
    rows.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y)
        rows[static_cast<std::size_t>(y)] = data.data() + static_cast<std::size_t>(y) * width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return data;
}

void write_png_bytes(const std::string& path, const std::vector<std::uint8_t>& data, int width,
                     int height, int channels) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot open png for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng: failed to allocate write struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng: failed to allocate info struct");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to write png: " + path);
    }
    png_init_io(png, file.get());
    const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
            data.data() + static_cast<std::size_t>(y) * width * channels);
    png_write_image(png, rows.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void save_png(const std::string& path, const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3)
        throw DimensionError("save_png: expected a (3,H,W) tensor");
    const int height = rgb.dim(1);
    const int width = rgb.dim(2);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(height) * width * 3);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c)
                data[(static_cast<std::size_t>(y) * width + x) * 3 + c] = to_byte(rgb.at(c, y, x));
    write_png_bytes(path, data, width, height, 3);
}

Tensor load_png(const std::string& path) {
    int width = 0, height = 0, channels = 0;
    const std::vector<std::uint8_t> data = read_png_bytes(path, width, height, channels);
    Tensor rgb({3, height, width});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                const std::size_t i =
                    (static_cast<std::size_t>(y) * width + x) * channels + (channels == 3 ? c : 0);
                rgb.at(c, y, x) = static_cast<double>(data[i]) / 255.0;
            }
    return rgb;
}

void save_mask_png(const std::string& path, const OcclusionMask& mask) {
    std::vector<std::uint8_t> data(static_cast<std::size_t>(mask.height) * mask.width);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            data[static_cast<std::size_t>(y) * mask.width + x] = mask.at(y, x) ? 255 : 0;
    write_png_bytes(path, data, mask.width, mask.height, 1);
}

OcclusionMask load_mask_png(const std::string& path) {
    int width = 0, height = 0, channels = 0;
    const std::vector<std::uint8_t> data = read_png_bytes(path, width, height, channels);
    OcclusionMask mask(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const std::uint8_t v = data[(static_cast<std::size_t>(y) * width + x) * channels];
            mask.at(y, x) = v >= 128 ? 1 : 0;
        }
    return mask;
}

void save_pfm(const std::string& path, const DepthMap& depth) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open pfm for writing: " + path);
    out << "Pf\n" << depth.width << " " << depth.height << "\n-1.0\n";
    // Rows are stored bottom-up per the format.
    std::vector<float> row(static_cast<std::size_t>(depth.width));
    for (int y = depth.height - 1; y >= 0; --y) {
        for (int x = 0; x < depth.width; ++x)
            row[static_cast<std::size_t>(x)] = static_cast<float>(depth.at(y, x));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed to write pfm: " + path);
}

DepthMap load_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open pfm for reading: " + path);
    std::string magic;
    int width = 0, height = 0;
    double scale = 0.0;
    if (!(in >> magic >> width >> height >> scale)) throw IoError("malformed pfm header: " + path);
    if (magic == "PF") throw IoError("color pfm is not supported: " + path);
    if (magic != "Pf") throw IoError("not a pfm file: " + path);
    if (width <= 0 || height <= 0) throw IoError("malformed pfm size: " + path);
    if (scale > 0.0) throw IoError("big-endian pfm is not supported: " + path);
    in.get();  // the single whitespace byte separating header and data

    DepthMap depth(height, width);
    std::vector<float> row(static_cast<std::size_t>(width));
    for (int y = height - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) throw IoError("truncated pfm data: " + path);
        for (int x = 0; x < width; ++x) depth.at(y, x) = static_cast<double>(row[static_cast<std::size_t>(x)]);
    }
    return depth;
}

}  // namespace cyclediff

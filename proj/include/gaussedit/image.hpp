#pragma once

#include "gaussedit/error.hpp"
#include "gaussedit/math.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace gaussedit {

/// Row-major H x W x 3 color buffer; also used for per-pixel gradients, which
/// may leave [0, 1].
class Image {
public:
    Image() = default;
    Image(int width, int height, double fill = 0.0)
        : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height * 3, fill) {
        require(width >= 0 && height >= 0, ErrorKind::Argument, "image: negative dimension");
    }
    Image(int width, int height, const Vec3& color) : Image(width, height) {
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) set(x, y, color);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
    bool same_shape(const Image& o) const { return width_ == o.width_ && height_ == o.height_; }

    double& at(int x, int y, int c) { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }

    Vec3 pixel(int x, int y) const {
        const double* p = &data_[(static_cast<std::size_t>(y) * width_ + x) * 3];
        return {p[0], p[1], p[2]};
    }
    void set(int x, int y, const Vec3& c) {
        double* p = &data_[(static_cast<std::size_t>(y) * width_ + x) * 3];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    std::optional<std::vector<double>>& alpha() { return alpha_; }
    const std::optional<std::vector<double>>& alpha() const { return alpha_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    void clamp01() {
        for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
    }

    bool operator==(const Image& o) const { return width_ == o.width_ && height_ == o.height_ && data_ == o.data_; }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
    std::optional<std::vector<double>> alpha_;
};

inline double max_abs_difference(const Image& a, const Image& b) {
    require(a.same_shape(b), ErrorKind::Argument, "image shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

/// Bilinear resample (pixel-center aligned).
inline Image resize_bilinear(const Image& src, int width, int height) {
    require(src.width() > 0 && src.height() > 0, ErrorKind::Argument, "resize: empty source");
    if (src.width() == width && src.height() == height) return src;
    Image out(width, height);
    const double sx = static_cast<double>(src.width()) / width;
    const double sy = static_cast<double>(src.height()) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height() - 1);
        const double ty = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width() - 1);
            const double tx = fx - x0;
            const Vec3 c = (1 - ty) * ((1 - tx) * src.pixel(x0, y0) + tx * src.pixel(x1, y0)) +
                           ty * ((1 - tx) * src.pixel(x0, y1) + tx * src.pixel(x1, y1));
            out.set(x, y, c);
        }
    }
    return out;
}

inline std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// 8-bit RGB PNG bytes; values are clamped to [0, 1] (no sRGB transfer).
inline std::vector<std::uint8_t> encode_png(const Image& img) {
    std::vector<std::uint8_t> rgb(img.pixel_count() * 3);
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = to_u8(img.data()[i]);

    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr))
        fail(ErrorKind::Format, std::string("png encode: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr))
        fail(ErrorKind::Format, std::string("png encode: ") + image.message);
    out.resize(size);
    return out;
}

inline Image decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        fail(ErrorKind::Format, std::string("png decode: ") + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
        png_image_free(&image);
        fail(ErrorKind::Format, std::string("png decode: ") + image.message);
    }
    Image out(static_cast<int>(image.width), static_cast<int>(image.height));
    for (std::size_t i = 0; i < rgb.size(); ++i) out.data()[i] = rgb[i] / 255.0;
    return out;
}

inline void write_png(const Image& img, const std::filesystem::path& path) {
    const auto bytes = encode_png(img);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Format, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Image read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Format, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

} // namespace gaussedit

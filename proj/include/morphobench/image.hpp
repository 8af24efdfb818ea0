#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace morphobench {

/// Row-major 8-bit grayscale image.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0) : width(w), height(h) {
        if (w <= 0 || h <= 0) throw ValidationError("image dimensions must be positive");
        pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
    }

    [[nodiscard]] std::uint8_t at(int x, int y) const {
        return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }
    std::uint8_t& at(int x, int y) {
        return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Row-major floating-point image used inside descriptor computations.
struct RealImage {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;

    RealImage() = default;
    RealImage(int w, int h, double fill = 0.0) : width(w), height(h) {
        pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
    }
    explicit RealImage(const GrayImage& g) : width(g.width), height(g.height) {
        pixels.assign(g.pixels.begin(), g.pixels.end());
    }

    [[nodiscard]] double at(int x, int y) const {
        return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }
    double& at(int x, int y) {
        return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(x)];
    }
    /// Border-replicating access.
    [[nodiscard]] double clamped(int x, int y) const {
        return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
    }
};

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

/// Bilinear sample at a real-valued position; pixel centers sit on integer
/// coordinates. Positions outside [0, w-1] x [0, h-1] (beyond a 1e-9 slack)
/// return `fill`.
template <typename Image>
double sample_bilinear(const Image& img, double x, double y, double fill) {
    constexpr double slack = 1e-9;
    const double maxx = img.width - 1;
    const double maxy = img.height - 1;
    if (!(x >= -slack && y >= -slack && x <= maxx + slack && y <= maxy + slack)) return fill;
    x = std::clamp(x, 0.0, maxx);
    y = std::clamp(y, 0.0, maxy);
    const int x0 = std::min(static_cast<int>(std::floor(x)), std::max(img.width - 2, 0));
    const int y0 = std::min(static_cast<int>(std::floor(y)), std::max(img.height - 2, 0));
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = (1.0 - fx) * img.at(x0, y0) + fx * img.at(x1, y0);
    const double bottom = (1.0 - fx) * img.at(x0, y1) + fx * img.at(x1, y1);
    return (1.0 - fy) * top + fy * bottom;
}

namespace detail {

inline void skip_pnm_space(std::istream& in) {
    for (;;) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

}  // namespace detail

/// Reads binary (P5) or ASCII (P2) PGM with maxval <= 255.
inline GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P2") throw IoError("not a PGM image: " + path.string());
    int w = 0, h = 0, maxval = 0;
    detail::skip_pnm_space(in);
    in >> w;
    detail::skip_pnm_space(in);
    in >> h;
    detail::skip_pnm_space(in);
    in >> maxval;
    if (!in || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw IoError("unsupported PGM header in " + path.string());
    GrayImage img(w, h);
    if (magic == "P5") {
        in.get();
        in.read(reinterpret_cast<char*>(img.pixels.data()),
                static_cast<std::streamsize>(img.pixels.size()));
        if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
            throw IoError("truncated PGM data in " + path.string());
    } else {
        for (auto& p : img.pixels) {
            int v = 0;
            if (!(in >> v)) throw IoError("truncated PGM data in " + path.string());
            p = static_cast<std::uint8_t>(v);
        }
    }
    if (maxval != 255)
        for (auto& p : img.pixels) p = to_byte(p * 255.0 / maxval);
    return img;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("failed writing image " + path.string());
}

}  // namespace morphobench

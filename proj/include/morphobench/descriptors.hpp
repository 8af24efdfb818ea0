#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <string>
#include <tuple>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "core.hpp"
#include "image.hpp"
#include "imaging.hpp"
#include "reduce.hpp"

namespace morphobench {

/// msk is a multi-scale keypoint descriptor in the SIFT family.
enum class DescriptorKind { hog, lbp, gabor, gist, msk };

inline constexpr std::array<DescriptorKind, 5> all_descriptor_kinds{
    DescriptorKind::hog, DescriptorKind::lbp, DescriptorKind::gabor, DescriptorKind::gist, DescriptorKind::msk};

inline const char* to_string(DescriptorKind k) {
    switch (k) {
        case DescriptorKind::hog: return "hog";
        case DescriptorKind::lbp: return "lbp";
        case DescriptorKind::gabor: return "gabor";
        case DescriptorKind::gist: return "gist";
        case DescriptorKind::msk: return "msk";
    }
    return "?";
}

inline DescriptorKind descriptor_from_string(const std::string& s) {
    for (auto k : all_descriptor_kinds)
        if (s == to_string(k)) return k;
    throw ConfigError("unknown descriptor kind '" + s + "'");
}

struct HogParams {
    int cell = 8;
    int block = 2;
    int bins = 9;
    double epsilon = 1e-3;
};

/// 8 neighbours at radius 1 with uniform-pattern coding (59 bins).
struct LbpParams {
    int cell = 16;
};

struct FilterBankParams {
    int scales = 4;
    int orientations = 8;
    int grid = 4;
    /// Centre frequency of the finest scale in cycles/pixel; halves per scale.
    double max_frequency = 0.25;
};

struct MskParams {
    int keypoints = 32;
    int intervals = 3;
    double sigma0 = 1.6;
    double contrast_threshold = 0.03;  ///< on intensities scaled to [0, 1]
    double edge_ratio = 10.0;
    int min_octave_side = 16;
};

struct DescriptorParams {
    HogParams hog;
    LbpParams lbp;
    FilterBankParams gabor;
    FilterBankParams gist;
    MskParams msk;
};

inline constexpr int lbp_bins = 59;
inline constexpr int msk_descriptor_length = 128;
inline constexpr int filter_bank_min_side = 16;

class DescriptorSizeError : public ValidationError {
public:
    DescriptorSizeError(DescriptorKind kind, std::size_t level, int w, int h)
        : ValidationError(std::string(to_string(kind)) + ": pyramid level " + std::to_string(level) + " (" +
                          std::to_string(w) + "x" + std::to_string(h) + ") is smaller than one descriptor cell") {}
};

/// Closed-form descriptor length for one w x h level.
inline std::size_t descriptor_length(DescriptorKind kind, int w, int h, const DescriptorParams& p) {
    switch (kind) {
        case DescriptorKind::hog: {
            const int bx = w / p.hog.cell - p.hog.block + 1;
            const int by = h / p.hog.cell - p.hog.block + 1;
            if (bx < 1 || by < 1) return 0;
            return static_cast<std::size_t>(bx) * static_cast<std::size_t>(by) *
                   static_cast<std::size_t>(p.hog.block * p.hog.block * p.hog.bins);
        }
        case DescriptorKind::lbp:
            return static_cast<std::size_t>(w / p.lbp.cell) * static_cast<std::size_t>(h / p.lbp.cell) * lbp_bins;
        case DescriptorKind::gabor:
            if (w < filter_bank_min_side || h < filter_bank_min_side) return 0;
            return static_cast<std::size_t>(p.gabor.orientations * p.gabor.grid * p.gabor.grid);
        case DescriptorKind::gist:
            if (w < filter_bank_min_side || h < filter_bank_min_side) return 0;
            return static_cast<std::size_t>(p.gist.scales * p.gist.orientations * p.gist.grid * p.gist.grid);
        case DescriptorKind::msk:
            return static_cast<std::size_t>(msk_descriptor_length) * static_cast<std::size_t>(p.msk.keypoints);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// HOG

inline std::vector<double> hog_level(const GrayImage& g, const HogParams& p) {
    const RealImage img(g);
    const int cx = img.width / p.cell;
    const int cy = img.height / p.cell;
    std::vector<double> cells(static_cast<std::size_t>(cx * cy * p.bins), 0.0);
    const double bin_width = pi / p.bins;
    for (int y = 0; y < cy * p.cell; ++y) {
        for (int x = 0; x < cx * p.cell; ++x) {
            const double gx = img.clamped(x + 1, y) - img.clamped(x - 1, y);
            const double gy = img.clamped(x, y + 1) - img.clamped(x, y - 1);
            const double mag = std::hypot(gx, gy);
            if (mag == 0.0) continue;
            double angle = std::atan2(gy, gx);
            if (angle < 0) angle += pi;
            if (angle >= pi) angle -= pi;
            const double pos = angle / bin_width - 0.5;
            const int lo = static_cast<int>(std::floor(pos));
            const double frac = pos - lo;
            const int b0 = (lo + p.bins) % p.bins;
            const int b1 = (lo + 1) % p.bins;
            const auto base = static_cast<std::size_t>(((y / p.cell) * cx + x / p.cell) * p.bins);
            cells[base + static_cast<std::size_t>(b0)] += mag * (1.0 - frac);
            cells[base + static_cast<std::size_t>(b1)] += mag * frac;
        }
    }

    std::vector<double> out;
    out.reserve(static_cast<std::size_t>((cx - p.block + 1) * (cy - p.block + 1) * p.block * p.block * p.bins));
    std::vector<double> block;
    for (int by = 0; by + p.block <= cy; ++by) {
        for (int bx = 0; bx + p.block <= cx; ++bx) {
            block.clear();
            for (int j = 0; j < p.block; ++j)
                for (int i = 0; i < p.block; ++i) {
                    const auto base = static_cast<std::size_t>(((by + j) * cx + bx + i) * p.bins);
                    block.insert(block.end(), cells.begin() + static_cast<std::ptrdiff_t>(base),
                                 cells.begin() + static_cast<std::ptrdiff_t>(base) + p.bins);
                }
            double sq = 0.0;
            for (double v : block) sq += v * v;
            const double scale = 1.0 / std::sqrt(sq + p.epsilon * p.epsilon);
            for (double v : block) out.push_back(v * scale);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// LBP

/// Maps each 8-bit code to its uniform-pattern bin; non-uniform codes share bin 58.
inline const std::array<int, 256>& lbp_uniform_table() {
    static const std::array<int, 256> table = [] {
        std::array<int, 256> t{};
        int next = 0;
        for (int code = 0; code < 256; ++code) {
            int transitions = 0;
            for (int b = 0; b < 8; ++b) transitions += ((code >> b) & 1) != ((code >> ((b + 1) % 8)) & 1);
            t[static_cast<std::size_t>(code)] = transitions <= 2 ? next++ : lbp_bins - 1;
        }
        return t;
    }();
    return table;
}

/// Code bit k is set when neighbour k >= centre; borders replicate.
inline int lbp_code(const RealImage& img, int x, int y) {
    static constexpr std::array<std::pair<int, int>, 8> offsets{
        {{-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}}};
    const double c = img.at(x, y);
    int code = 0;
    for (int k = 0; k < 8; ++k)
        if (img.clamped(x + offsets[static_cast<std::size_t>(k)].first, y + offsets[static_cast<std::size_t>(k)].second) >= c)
            code |= 1 << k;
    return code;
}

inline std::vector<double> lbp_level(const GrayImage& g, const LbpParams& p) {
    const RealImage img(g);
    const auto& table = lbp_uniform_table();
    const int cx = img.width / p.cell;
    const int cy = img.height / p.cell;
    std::vector<double> out(static_cast<std::size_t>(cx * cy * lbp_bins), 0.0);
    const double inv = 1.0 / (p.cell * p.cell);
    for (int y = 0; y < cy * p.cell; ++y)
        for (int x = 0; x < cx * p.cell; ++x) {
            const auto base = static_cast<std::size_t>(((y / p.cell) * cx + x / p.cell) * lbp_bins);
            out[base + static_cast<std::size_t>(table[static_cast<std::size_t>(lbp_code(img, x, y))])] += inv;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Frequency-domain Gabor bank shared by the gabor and gist descriptors.

namespace detail {

using Complex = std::complex<double>;

inline void fft2(std::vector<Complex>& data, int w, int h, bool inverse, Eigen::FFT<double>& fft) {
    std::vector<Complex> in, out;
    in.resize(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(y) * w, w, in.begin());
        if (inverse) fft.inv(out, in); else fft.fwd(out, in);
        std::copy_n(out.begin(), w, data.begin() + static_cast<std::ptrdiff_t>(y) * w);
    }
    in.resize(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) in[static_cast<std::size_t>(y)] = data[static_cast<std::size_t>(y * w + x)];
        if (inverse) fft.inv(out, in); else fft.fwd(out, in);
        for (int y = 0; y < h; ++y) data[static_cast<std::size_t>(y * w + x)] = out[static_cast<std::size_t>(y)];
    }
}

/// Signed frequency (cycles/pixel) of DFT bin k in a length-n transform.
inline double bin_frequency(int k, int n) { return (k <= (n - 1) / 2 ? k : k - n) / static_cast<double>(n); }

/// One-sided Gabor transfer function with one-octave radial bandwidth and
/// zero response at DC.
struct GaborTransfer {
    GaborTransfer(double f0, double theta, int orientations)
        : f0_(f0), c_(std::cos(theta)), s_(std::sin(theta)) {
        const double ln2 = std::sqrt(2.0 * std::log(2.0));
        const double sigma_u = f0 / 3.0 / ln2;
        const double sigma_v = f0 * std::tan(pi / (2.0 * orientations)) / ln2;
        ku_ = 1.0 / (2 * sigma_u * sigma_u);
        kv_ = 1.0 / (2 * sigma_v * sigma_v);
    }

    [[nodiscard]] double operator()(double fx, double fy) const {
        const double u = fx * c_ + fy * s_ - f0_;
        const double v = -fx * s_ + fy * c_;
        return std::exp(-u * u * ku_ - v * v * kv_);
    }

private:
    double f0_, c_, s_, ku_ = 0.0, kv_ = 0.0;
};

inline double gabor_transfer(double fx, double fy, double f0, double theta, int orientations) {
    return GaborTransfer(f0, theta, orientations)(fx, fy);
}

/// Smallest n' >= n with no prime factor above 5 (fast transform length).
inline int smooth_length(int n) {
    for (int m = std::max(n, 1);; ++m) {
        int r = m;
        for (int f : {2, 3, 5})
            while (r % f == 0) r /= f;
        if (r == 1) return m;
    }
}

/// Response magnitude maps, indexed [scale * orientations + orientation].
/// The mean-removed image is zero-padded to a fast transform size; maps are
/// cropped back to the image.
inline std::vector<RealImage> filter_bank_magnitudes(const GrayImage& g, const FilterBankParams& p) {
    const int w = g.width, h = g.height;
    const int pw = smooth_length(w), ph = smooth_length(h);
    double mean = 0.0;
    for (auto v : g.pixels) mean += v;
    mean /= static_cast<double>(g.pixels.size());
    std::vector<Complex> spectrum(static_cast<std::size_t>(pw) * static_cast<std::size_t>(ph));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            spectrum[static_cast<std::size_t>(y * pw + x)] = g.pixels[static_cast<std::size_t>(y * w + x)] - mean;

    Eigen::FFT<double> fft;
    fft2(spectrum, pw, ph, false, fft);

    std::vector<double> fxs(static_cast<std::size_t>(pw)), fys(static_cast<std::size_t>(ph));
    for (int x = 0; x < pw; ++x) fxs[static_cast<std::size_t>(x)] = bin_frequency(x, pw);
    for (int y = 0; y < ph; ++y) fys[static_cast<std::size_t>(y)] = bin_frequency(y, ph);

    std::vector<RealImage> maps;
    maps.reserve(static_cast<std::size_t>(p.scales * p.orientations));
    std::vector<Complex> buf(spectrum.size());
    for (int s = 0; s < p.scales; ++s) {
        const double f0 = p.max_frequency / std::pow(2.0, s);
        for (int o = 0; o < p.orientations; ++o) {
            const GaborTransfer transfer(f0, pi * o / p.orientations, p.orientations);
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x) {
                    const auto idx = static_cast<std::size_t>(y * pw + x);
                    const double gain = (x == 0 && y == 0) ? 0.0 : transfer(fxs[static_cast<std::size_t>(x)], fys[static_cast<std::size_t>(y)]);
                    buf[idx] = spectrum[idx] * gain;
                }
            fft2(buf, pw, ph, true, fft);
            RealImage mag(w, h);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    mag.pixels[static_cast<std::size_t>(y * w + x)] = std::abs(buf[static_cast<std::size_t>(y * pw + x)]);
            maps.push_back(std::move(mag));
        }
    }
    return maps;
}

/// Mean of `img` over cell (i, j) of a grid x grid partition.
inline double cell_mean(const RealImage& img, int grid, int i, int j) {
    const int x0 = i * img.width / grid, x1 = (i + 1) * img.width / grid;
    const int y0 = j * img.height / grid, y1 = (j + 1) * img.height / grid;
    double s = 0.0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) s += img.at(x, y);
    return s / static_cast<double>((x1 - x0) * (y1 - y0));
}

}  // namespace detail

/// orientations x grid^2 values: mean response magnitude per cell, averaged over scales.
inline std::vector<double> gabor_from_maps(const std::vector<RealImage>& maps, const FilterBankParams& p) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(p.orientations * p.grid * p.grid));
    for (int o = 0; o < p.orientations; ++o)
        for (int j = 0; j < p.grid; ++j)
            for (int i = 0; i < p.grid; ++i) {
                double acc = 0.0;
                for (int s = 0; s < p.scales; ++s)
                    acc += detail::cell_mean(maps[static_cast<std::size_t>(s * p.orientations + o)], p.grid, i, j);
                out.push_back(acc / p.scales);
            }
    return out;
}

/// scales x orientations x grid^2 values: spatial energy grid per filter.
inline std::vector<double> gist_from_maps(const std::vector<RealImage>& maps, const FilterBankParams& p) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(p.scales * p.orientations * p.grid * p.grid));
    for (const auto& m : maps)
        for (int j = 0; j < p.grid; ++j)
            for (int i = 0; i < p.grid; ++i) out.push_back(detail::cell_mean(m, p.grid, i, j));
    return out;
}

inline std::vector<double> gabor_level(const GrayImage& g, const FilterBankParams& p) {
    return gabor_from_maps(detail::filter_bank_magnitudes(g, p), p);
}

inline std::vector<double> gist_level(const GrayImage& g, const FilterBankParams& p) {
    return gist_from_maps(detail::filter_bank_magnitudes(g, p), p);
}

// ---------------------------------------------------------------------------
// msk: difference-of-Gaussians keypoints with 4x4x8 orientation histograms

struct Keypoint {
    double x = 0.0;      ///< level pixels
    double y = 0.0;
    double scale = 0.0;  ///< Gaussian sigma in level pixels
    double response = 0.0;
    double orientation = 0.0;
    std::vector<double> descriptor;
};

namespace detail {

inline RealImage gaussian_blur(const RealImage& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    RealImage tmp(img.width, img.height), out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * img.clamped(x + i, y);
            tmp.at(x, y) = acc;
        }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp.clamped(x, y + i);
            out.at(x, y) = acc;
        }
    return out;
}

inline RealImage subtract(const RealImage& a, const RealImage& b) {
    RealImage out(a.width, a.height);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = a.pixels[i] - b.pixels[i];
    return out;
}

inline RealImage halve(const RealImage& img) {
    RealImage out(img.width / 2, img.height / 2);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out.at(x, y) = img.at(2 * x, 2 * y);
    return out;
}

inline bool is_extremum(const std::vector<RealImage>& dog, int s, int x, int y) {
    const double v = dog[static_cast<std::size_t>(s)].at(x, y);
    bool is_max = true, is_min = true;
    for (int ds = -1; ds <= 1; ++ds)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (ds == 0 && dy == 0 && dx == 0) continue;
                const double n = dog[static_cast<std::size_t>(s + ds)].at(x + dx, y + dy);
                if (n >= v) is_max = false;
                if (n <= v) is_min = false;
                if (!is_max && !is_min) return false;
            }
    return true;
}

/// Dominant gradient direction from a 36-bin Gaussian-weighted histogram.
inline double dominant_orientation(const RealImage& g, int x, int y, double sigma) {
    std::array<double, 36> hist{};
    const double ws = 1.5 * sigma;
    const int radius = std::max(1, static_cast<int>(std::round(3.0 * ws)));
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const int px = x + dx, py = y + dy;
            if (px <= 0 || py <= 0 || px >= g.width - 1 || py >= g.height - 1) continue;
            const double gx = g.at(px + 1, py) - g.at(px - 1, py);
            const double gy = g.at(px, py + 1) - g.at(px, py - 1);
            const double mag = std::hypot(gx, gy);
            if (mag == 0.0) continue;
            double a = std::atan2(gy, gx);
            if (a < 0) a += 2 * pi;
            const int bin = std::min(35, static_cast<int>(a / (2 * pi) * 36));
            hist[static_cast<std::size_t>(bin)] += mag * std::exp(-(dx * dx + dy * dy) / (2 * ws * ws));
        }
    const auto best = std::max_element(hist.begin(), hist.end()) - hist.begin();
    return (static_cast<double>(best) + 0.5) * 2 * pi / 36;
}

/// 4x4 spatial x 8 orientation histogram, trilinear votes, normalised and clipped at 0.2.
inline std::vector<double> orientation_histogram(const RealImage& g, double x, double y, double sigma,
                                                 double orientation) {
    constexpr int nspatial = 4, nbins = 8;
    std::vector<double> desc(nspatial * nspatial * nbins, 0.0);
    const double cell = 3.0 * sigma;
    const double c = std::cos(orientation), s = std::sin(orientation);
    const int radius = static_cast<int>(std::ceil(cell * std::sqrt(2.0) * (nspatial + 1) / 2.0));
    const int cx = static_cast<int>(std::round(x)), cy = static_cast<int>(std::round(y));
    const double wsig = nspatial / 2.0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const int px = cx + dx, py = cy + dy;
            if (px <= 0 || py <= 0 || px >= g.width - 1 || py >= g.height - 1) continue;
            const double rx = (c * dx + s * dy) / cell;
            const double ry = (-s * dx + c * dy) / cell;
            const double bx = rx + nspatial / 2.0 - 0.5;
            const double by = ry + nspatial / 2.0 - 0.5;
            if (bx <= -1 || by <= -1 || bx >= nspatial || by >= nspatial) continue;
            const double gx = g.at(px + 1, py) - g.at(px - 1, py);
            const double gy = g.at(px, py + 1) - g.at(px, py - 1);
            const double mag = std::hypot(gx, gy);
            if (mag == 0.0) continue;
            double a = std::atan2(gy, gx) - orientation;
            while (a < 0) a += 2 * pi;
            while (a >= 2 * pi) a -= 2 * pi;
            const double bo = a / (2 * pi) * nbins;
            const double weight = mag * std::exp(-(rx * rx + ry * ry) / (2 * wsig * wsig));
            const int x0 = static_cast<int>(std::floor(bx)), y0 = static_cast<int>(std::floor(by));
            const int o0 = static_cast<int>(std::floor(bo));
            const double fx = bx - x0, fy = by - y0, fo = bo - o0;
            for (int j = 0; j <= 1; ++j) {
                const int yy = y0 + j;
                if (yy < 0 || yy >= nspatial) continue;
                const double wy = j ? fy : 1 - fy;
                for (int i = 0; i <= 1; ++i) {
                    const int xx = x0 + i;
                    if (xx < 0 || xx >= nspatial) continue;
                    const double wx = i ? fx : 1 - fx;
                    for (int k = 0; k <= 1; ++k) {
                        const int oo = (o0 + k) % nbins;
                        const double wo = k ? fo : 1 - fo;
                        desc[static_cast<std::size_t>((yy * nspatial + xx) * nbins + oo)] += weight * wx * wy * wo;
                    }
                }
            }
        }
    auto normalise = [&desc] {
        double sq = 0.0;
        for (double v : desc) sq += v * v;
        if (sq <= 0.0) return;
        const double inv = 1.0 / std::sqrt(sq);
        for (auto& v : desc) v *= inv;
    };
    normalise();
    for (auto& v : desc) v = std::min(v, 0.2);
    normalise();
    return desc;
}

}  // namespace detail

/// Difference-of-Gaussians keypoints with descriptors, sorted by scale
/// descending (then |response| descending, then y, x).
inline std::vector<Keypoint> detect_keypoints(const GrayImage& g, const MskParams& p) {
    RealImage img(g);
    for (auto& v : img.pixels) v /= 255.0;
    RealImage base = detail::gaussian_blur(img, std::sqrt(p.sigma0 * p.sigma0 - 0.25));
    const int s = p.intervals;
    const double edge = (p.edge_ratio + 1) * (p.edge_ratio + 1) / p.edge_ratio;

    std::vector<Keypoint> kps;
    for (int octave = 0; std::min(base.width, base.height) >= p.min_octave_side; ++octave) {
        std::vector<RealImage> gauss{base};
        std::vector<double> sigmas{p.sigma0};
        for (int i = 1; i < s + 3; ++i) {
            const double sig = p.sigma0 * std::pow(2.0, static_cast<double>(i) / s);
            gauss.push_back(detail::gaussian_blur(gauss.back(), std::sqrt(sig * sig - sigmas.back() * sigmas.back())));
            sigmas.push_back(sig);
        }
        std::vector<RealImage> dog;
        for (int i = 0; i + 1 < static_cast<int>(gauss.size()); ++i)
            dog.push_back(detail::subtract(gauss[static_cast<std::size_t>(i + 1)], gauss[static_cast<std::size_t>(i)]));

        const double factor = std::pow(2.0, octave);
        for (int i = 1; i <= s; ++i) {
            const auto& d = dog[static_cast<std::size_t>(i)];
            for (int y = 1; y < d.height - 1; ++y)
                for (int x = 1; x < d.width - 1; ++x) {
                    const double v = d.at(x, y);
                    if (std::abs(v) < p.contrast_threshold) continue;
                    if (!detail::is_extremum(dog, i, x, y)) continue;
                    const double dxx = d.at(x + 1, y) + d.at(x - 1, y) - 2 * v;
                    const double dyy = d.at(x, y + 1) + d.at(x, y - 1) - 2 * v;
                    const double dxy = (d.at(x + 1, y + 1) - d.at(x - 1, y + 1) - d.at(x + 1, y - 1) + d.at(x - 1, y - 1)) / 4;
                    const double tr = dxx + dyy, det = dxx * dyy - dxy * dxy;
                    if (det <= 0 || tr * tr / det >= edge) continue;
                    const auto& gi = gauss[static_cast<std::size_t>(i)];
                    const double sig = sigmas[static_cast<std::size_t>(i)];
                    Keypoint kp;
                    kp.x = x * factor;
                    kp.y = y * factor;
                    kp.scale = sig * factor;
                    kp.response = v;
                    kp.orientation = detail::dominant_orientation(gi, x, y, sig);
                    kp.descriptor = detail::orientation_histogram(gi, x, y, sig, kp.orientation);
                    kps.push_back(std::move(kp));
                }
        }
        base = detail::halve(gauss[static_cast<std::size_t>(s)]);
    }
    std::sort(kps.begin(), kps.end(), [](const Keypoint& a, const Keypoint& b) {
        if (a.scale != b.scale) return a.scale > b.scale;
        if (std::abs(a.response) != std::abs(b.response)) return std::abs(a.response) > std::abs(b.response);
        return std::tie(a.y, a.x) < std::tie(b.y, b.x);
    });
    return kps;
}

/// 128*K values: descriptors of the K largest-scale keypoints, zero-padded.
inline Vector msk_descriptor(const GrayImage& img, int k, const MskParams& base = {}) {
    if (k < 1) throw ValidationError("msk keypoint budget must be at least 1");
    MskParams p = base;
    p.keypoints = k;
    const auto kps = detect_keypoints(img, p);
    Vector out = Vector::Zero(static_cast<Index>(msk_descriptor_length) * k);
    const auto used = std::min<std::size_t>(kps.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < used; ++i)
        for (int j = 0; j < msk_descriptor_length; ++j)
            out[static_cast<Index>(i) * msk_descriptor_length + j] = kps[i].descriptor[static_cast<std::size_t>(j)];
    return out;
}

// ---------------------------------------------------------------------------

/// Per-level descriptors concatenated level-major.
inline Vector compute_descriptor(DescriptorKind kind, const Pyramid& pyr, const DescriptorParams& params = {}) {
    if (pyr.levels.empty()) throw ValidationError("descriptor needs a non-empty pyramid");
    std::vector<double> all;
    for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
        const auto& level = pyr.levels[l];
        const std::size_t expected = descriptor_length(kind, level.width, level.height, params);
        if (expected == 0) throw DescriptorSizeError(kind, l, level.width, level.height);
        std::vector<double> v;
        switch (kind) {
            case DescriptorKind::hog: v = hog_level(level, params.hog); break;
            case DescriptorKind::lbp: v = lbp_level(level, params.lbp); break;
            case DescriptorKind::gabor: v = gabor_level(level, params.gabor); break;
            case DescriptorKind::gist: v = gist_level(level, params.gist); break;
            case DescriptorKind::msk: {
                const Vector m = msk_descriptor(level, params.msk.keypoints, params.msk);
                v.assign(m.data(), m.data() + m.size());
                break;
            }
        }
        all.insert(all.end(), v.begin(), v.end());
    }
    return Eigen::Map<const Vector>(all.data(), static_cast<Index>(all.size()));
}

/// Same values as calling compute_descriptor per kind; gabor and gist share
/// their filter-bank responses when their parameters coincide.
inline std::vector<Vector> compute_descriptors(std::span<const DescriptorKind> kinds, const Pyramid& pyr,
                                               const DescriptorParams& params = {}) {
    const auto has = [&](DescriptorKind k) { return std::find(kinds.begin(), kinds.end(), k) != kinds.end(); };
    const auto& a = params.gabor;
    const auto& b = params.gist;
    const bool share = has(DescriptorKind::gabor) && has(DescriptorKind::gist) && a.scales == b.scales &&
                       a.orientations == b.orientations && a.grid == b.grid && a.max_frequency == b.max_frequency;
    std::vector<Vector> out;
    if (!share) {
        for (auto k : kinds) out.push_back(compute_descriptor(k, pyr, params));
        return out;
    }
    if (pyr.levels.empty()) throw ValidationError("descriptor needs a non-empty pyramid");
    std::vector<double> gabor, gist;
    for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
        const auto& level = pyr.levels[l];
        for (auto k : {DescriptorKind::gabor, DescriptorKind::gist})
            if (descriptor_length(k, level.width, level.height, params) == 0)
                throw DescriptorSizeError(k, l, level.width, level.height);
        const auto maps = detail::filter_bank_magnitudes(level, a);
        const auto ga = gabor_from_maps(maps, a);
        const auto gi = gist_from_maps(maps, b);
        gabor.insert(gabor.end(), ga.begin(), ga.end());
        gist.insert(gist.end(), gi.begin(), gi.end());
    }
    for (auto k : kinds) {
        const auto& v = k == DescriptorKind::gabor ? gabor : gist;
        if (k == DescriptorKind::gabor || k == DescriptorKind::gist)
            out.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
        else
            out.push_back(compute_descriptor(k, pyr, params));
    }
    return out;
}

/// Total closed-form length over all pyramid levels.
inline std::size_t descriptor_length(DescriptorKind kind, const Pyramid& pyr, const DescriptorParams& p = {}) {
    std::size_t n = 0;
    for (const auto& l : pyr.levels) n += descriptor_length(kind, l.width, l.height, p);
    return n;
}

inline constexpr Index appearance_block_dim = 85;

/// Concatenation of per-descriptor PCA projections in (hog, lbp, gabor, gist, msk) order.
struct AppearanceFeature {
    Vector values;
    std::array<Index, 6> block_offsets{};  ///< block k spans [offsets[k], offsets[k+1])
};

inline AppearanceFeature appearance_feature(const std::array<Vector, 5>& raw, const std::array<PcaModel, 5>& reducers) {
    AppearanceFeature f;
    std::vector<Vector> blocks;
    Index total = 0;
    for (std::size_t k = 0; k < 5; ++k) {
        if (raw[k].size() != reducers[k].input_dim())
            throw DimensionError(std::string(to_string(all_descriptor_kinds[k])) + " descriptor has length " +
                                 std::to_string(raw[k].size()) + " but its reducer expects " +
                                 std::to_string(reducers[k].input_dim()));
        blocks.push_back(reducers[k].transform(raw[k]));
        f.block_offsets[k] = total;
        total += blocks.back().size();
    }
    f.block_offsets[5] = total;
    f.values.resize(total);
    for (std::size_t k = 0; k < 5; ++k) f.values.segment(f.block_offsets[k], blocks[k].size()) = blocks[k];
    return f;
}

inline AppearanceFeature appearance_feature(const Pyramid& pyr, const std::array<PcaModel, 5>& reducers,
                                            const DescriptorParams& params = {}) {
    std::array<Vector, 5> raw;
    for (std::size_t k = 0; k < 5; ++k) raw[k] = compute_descriptor(all_descriptor_kinds[k], pyr, params);
    return appearance_feature(raw, reducers);
}

/// Fits one reducer per kind on a stack of raw descriptors (rows = samples),
/// each at min(85, n-1, d) dimensions.
inline std::array<PcaModel, 5> fit_appearance_reducers(const std::array<Matrix, 5>& raw,
                                                       Index dims = appearance_block_dim) {
    std::array<PcaModel, 5> out;
    for (std::size_t k = 0; k < 5; ++k) {
        out[k] = pca_fit(raw[k], dims);
        if (out[k].output_dim() < dims)
            warn(std::string(to_string(all_descriptor_kinds[k])) + " block reduced to " +
                 std::to_string(out[k].output_dim()) + " dimensions (requested " + std::to_string(dims) +
                 "; limited by sample count or descriptor length)");
    }
    return out;
}

}  // namespace morphobench

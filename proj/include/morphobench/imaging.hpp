#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "core.hpp"
#include "geometry.hpp"
#include "image.hpp"

namespace morphobench {

inline constexpr std::uint8_t default_fill = 128;

struct AlignParams {
    /// Output canvas; 0 keeps the input size.
    int out_width = 0;
    int out_height = 0;
    /// Pupil targets in output pixels; unset means 35%/65% of the width at 40% height.
    std::optional<Point2> left_target;
    std::optional<Point2> right_target;
    std::uint8_t fill = default_fill;

    [[nodiscard]] std::pair<Point2, Point2> targets(int w, int h) const {
        const Point2 l = left_target.value_or(Point2{0.35 * w, 0.40 * h});
        const Point2 r = right_target.value_or(Point2{0.65 * w, 0.40 * h});
        return {l, r};
    }
};

/// Resamples `img` through the inverse of `to_output` onto a w x h canvas.
inline GrayImage resample_similarity(const GrayImage& img, const SimilarityTransform& to_output, int w,
                                     int h, std::uint8_t fill) {
    const auto back = to_output.inverse();
    GrayImage out(w, h, fill);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Point2 s = back.apply({static_cast<double>(x), static_cast<double>(y)});
            out.at(x, y) = to_byte(sample_bilinear(img, s.x, s.y, fill));
        }
    }
    return out;
}

/// Rotates and rescales the image so the pupils land on the configured targets.
inline std::pair<GrayImage, SimilarityTransform> align_image(const GrayImage& img, Point2 left_pupil,
                                                             Point2 right_pupil,
                                                             const AlignParams& params = {}) {
    if (left_pupil == right_pupil) throw DegenerateInputError("pupils are coincident; cannot align image");
    const int w = params.out_width > 0 ? params.out_width : img.width;
    const int h = params.out_height > 0 ? params.out_height : img.height;
    const auto [lt, rt] = params.targets(w, h);
    const auto t = SimilarityTransform::from_pairs(left_pupil, right_pupil, lt, rt);
    return {resample_similarity(img, t, w, h, params.fill), t};
}

/// Axis-aligned square in source pixel coordinates.
struct CropRect {
    double x = 0.0;
    double y = 0.0;
    double side = 0.0;

    [[nodiscard]] double x_max() const { return x + side; }
    [[nodiscard]] double y_max() const { return y + side; }
};

struct CropGeometry {
    Point2 midpoint;  ///< M, midpoint of the pupil segment AB
    Point2 center;    ///< C = M + (0, |AB|/2), y pointing down
    double pupil_distance = 0.0;
    CropRect rect;    ///< square of side 2|AB| centred on C
};

inline CropGeometry crop_geometry(Point2 a, Point2 b) {
    CropGeometry g;
    g.pupil_distance = norm(b - a);
    if (!(g.pupil_distance > 0.0)) throw DegenerateInputError("pupils are coincident; cannot crop");
    g.midpoint = 0.5 * (a + b);
    g.center = {g.midpoint.x, g.midpoint.y + g.pupil_distance / 2};
    const double side = 2 * g.pupil_distance;
    g.rect = {g.center.x - side / 2, g.center.y - side / 2, side};
    return g;
}

struct CropParams {
    int out_size = 200;
    std::uint8_t fill = default_fill;
};

/// Crops the square face region and resamples it to out_size x out_size.
/// The rect uses edge coordinates (pixel i spans [i, i+1)).
inline std::pair<GrayImage, CropRect> crop_face(const GrayImage& img, Point2 left_pupil, Point2 right_pupil,
                                                const CropParams& params = {}) {
    if (params.out_size <= 0) throw ValidationError("crop output size must be positive");
    const auto g = crop_geometry(left_pupil, right_pupil);
    const double step = g.rect.side / params.out_size;
    GrayImage out(params.out_size, params.out_size, params.fill);
    for (int v = 0; v < params.out_size; ++v) {
        const double sy = g.rect.y + (v + 0.5) * step - 0.5;
        for (int u = 0; u < params.out_size; ++u) {
            const double sx = g.rect.x + (u + 0.5) * step - 0.5;
            out.at(u, v) = to_byte(sample_bilinear(img, sx, sy, params.fill));
        }
    }
    return {std::move(out), g.rect};
}

/// Keeps pixels where the mask is nonzero; everything else becomes `fill`.
inline GrayImage apply_mask(const GrayImage& img, const GrayImage& mask, std::uint8_t fill = default_fill) {
    if (img.width != mask.width || img.height != mask.height)
        throw DimensionError("mask size does not match image size");
    GrayImage out = img;
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
        if (mask.pixels[i] == 0) out.pixels[i] = fill;
    return out;
}

// ---------------------------------------------------------------------------
// Delaunay triangulation (Bowyer-Watson) and piecewise-affine warping.

using Triangle = std::array<std::size_t, 3>;

namespace detail {

inline double orient(Point2 a, Point2 b, Point2 c) {
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

/// > 0 when d lies strictly inside the circumcircle of counter-clockwise (a, b, c).
inline double incircle(Point2 a, Point2 b, Point2 c, Point2 d) {
    const double adx = a.x - d.x, ady = a.y - d.y;
    const double bdx = b.x - d.x, bdy = b.y - d.y;
    const double cdx = c.x - d.x, cdy = c.y - d.y;
    const double ad = adx * adx + ady * ady;
    const double bd = bdx * bdx + bdy * bdy;
    const double cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

inline bool all_collinear(std::span<const Point2> pts) {
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i] == pts[0]) continue;
        const double scale = norm(pts[i] - pts[0]);
        for (std::size_t j = 1; j < pts.size(); ++j)
            if (std::abs(orient(pts[0], pts[i], pts[j])) > 1e-9 * scale * (1.0 + norm(pts[j] - pts[0])))
                return false;
        return true;
    }
    return true;
}

}  // namespace detail

/// Triangles are returned counter-clockwise (in a y-up sense of orient > 0).
inline std::vector<Triangle> delaunay(std::span<const Point2> pts) {
    const std::size_t n = pts.size();
    if (n < 3 || detail::all_collinear(pts))
        throw DegenerateInputError("triangulation needs at least three non-collinear points");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (pts[i] == pts[j]) throw DegenerateInputError("triangulation input has duplicate points");

    double minx = pts[0].x, maxx = pts[0].x, miny = pts[0].y, maxy = pts[0].y;
    for (const auto& p : pts) {
        minx = std::min(minx, p.x);
        maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y);
        maxy = std::max(maxy, p.y);
    }
    const double span = std::max(maxx - minx, maxy - miny);
    const Point2 mid{(minx + maxx) / 2, (miny + maxy) / 2};
    std::vector<Point2> all(pts.begin(), pts.end());
    all.push_back({mid.x - 100 * span, mid.y - 100 * span});
    all.push_back({mid.x + 100 * span, mid.y - 100 * span});
    all.push_back({mid.x, mid.y + 100 * span});

    auto ccw = [&](Triangle t) {
        if (detail::orient(all[t[0]], all[t[1]], all[t[2]]) < 0) std::swap(t[1], t[2]);
        return t;
    };

    std::vector<Triangle> tris{ccw({n, n + 1, n + 2})};
    for (std::size_t p = 0; p < n; ++p) {
        std::vector<Triangle> keep;
        std::vector<std::array<std::size_t, 2>> edges;
        for (const auto& t : tris) {
            if (detail::incircle(all[t[0]], all[t[1]], all[t[2]], all[p]) > 0) {
                for (int e = 0; e < 3; ++e) edges.push_back({t[e], t[(e + 1) % 3]});
            } else {
                keep.push_back(t);
            }
        }
        // Boundary of the cavity: edges that appear once.
        for (std::size_t i = 0; i < edges.size(); ++i) {
            bool shared = false;
            for (std::size_t j = 0; j < edges.size(); ++j) {
                if (i != j && edges[i][0] == edges[j][1] && edges[i][1] == edges[j][0]) {
                    shared = true;
                    break;
                }
            }
            if (!shared) keep.push_back(ccw({edges[i][0], edges[i][1], p}));
        }
        tris = std::move(keep);
    }

    std::vector<Triangle> out;
    for (const auto& t : tris) {
        if (t[0] >= n || t[1] >= n || t[2] >= n) continue;
        if (std::abs(detail::orient(pts[t[0]], pts[t[1]], pts[t[2]])) <= 1e-12 * span * span) continue;
        out.push_back(t);
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Piecewise-affine map defined by corresponding vertex sets sharing one
/// triangulation (computed on the destination vertices).
class PiecewiseAffineWarp {
public:
    PiecewiseAffineWarp(std::vector<Point2> source, std::vector<Point2> destination)
        : src_(std::move(source)), dst_(std::move(destination)) {
        if (src_.size() != dst_.size()) throw DimensionError("warp vertex sets differ in size");
        tris_ = delaunay(dst_);
    }

    [[nodiscard]] const std::vector<Triangle>& triangles() const { return tris_; }
    [[nodiscard]] const std::vector<Point2>& source() const { return src_; }
    [[nodiscard]] const std::vector<Point2>& destination() const { return dst_; }

    /// Destination -> source.
    [[nodiscard]] std::optional<Point2> map_backward(Point2 p) const { return map(p, dst_, src_); }
    /// Source -> destination.
    [[nodiscard]] std::optional<Point2> map_forward(Point2 p) const { return map(p, src_, dst_); }

    /// Index of the destination triangle containing p, if any.
    [[nodiscard]] std::optional<std::size_t> locate(Point2 p) const {
        for (std::size_t t = 0; t < tris_.size(); ++t)
            if (barycentric(p, dst_, tris_[t])) return t;
        return std::nullopt;
    }

    [[nodiscard]] std::optional<std::array<double, 3>> barycentric(Point2 p, const std::vector<Point2>& v,
                                                                  const Triangle& t) const {
        const Point2 a = v[t[0]], b = v[t[1]], c = v[t[2]];
        const double det = detail::orient(a, b, c);
        if (det == 0.0) return std::nullopt;
        const double w1 = detail::orient(p, b, c) / det;
        const double w2 = detail::orient(a, p, c) / det;
        const double w3 = 1.0 - w1 - w2;
        constexpr double tol = -1e-9;
        if (w1 < tol || w2 < tol || w3 < tol) return std::nullopt;
        return std::array<double, 3>{w1, w2, w3};
    }

private:
    [[nodiscard]] std::optional<Point2> map(Point2 p, const std::vector<Point2>& from,
                                            const std::vector<Point2>& to) const {
        for (const auto& t : tris_) {
            if (auto w = barycentric(p, from, t)) {
                return Point2{(*w)[0] * to[t[0]].x + (*w)[1] * to[t[1]].x + (*w)[2] * to[t[2]].x,
                              (*w)[0] * to[t[0]].y + (*w)[1] * to[t[1]].y + (*w)[2] * to[t[2]].y};
            }
        }
        return std::nullopt;
    }

    std::vector<Point2> src_;
    std::vector<Point2> dst_;
    std::vector<Triangle> tris_;
};

/// Corners and edge midpoints of a w x h image, in pixel-center coordinates.
inline std::vector<Point2> border_anchors(int w, int h) {
    const double r = w - 1, b = h - 1;
    return {{0, 0}, {r / 2, 0}, {r, 0}, {r, b / 2}, {r, b}, {r / 2, b}, {0, b}, {0, b / 2}};
}

/// Builds the warp moving `landmarks` onto `targets` (both in image pixels),
/// anchored by the 8 border points.
inline PiecewiseAffineWarp make_mean_warp(std::span<const Point2> landmarks, std::span<const Point2> targets,
                                          int w, int h) {
    if (landmarks.size() != targets.size()) throw DimensionError("landmark and target counts differ");
    if (detail::all_collinear(landmarks) || detail::all_collinear(targets))
        throw DegenerateInputError("landmarks are collinear; cannot triangulate");
    std::vector<Point2> src(landmarks.begin(), landmarks.end());
    std::vector<Point2> dst(targets.begin(), targets.end());
    for (const auto& a : border_anchors(w, h)) {
        src.push_back(a);
        dst.push_back(a);
    }
    return PiecewiseAffineWarp(std::move(src), std::move(dst));
}

/// Piecewise-affine warp of `img` taking each landmark onto its target position.
inline GrayImage warp_to_mean(const GrayImage& img, std::span<const Point2> landmarks,
                              std::span<const Point2> targets, std::uint8_t fill = default_fill) {
    const auto warp = make_mean_warp(landmarks, targets, img.width, img.height);
    const auto& src = warp.source();
    const auto& dst = warp.destination();

    GrayImage out(img.width, img.height, fill);
    std::vector<bool> done(out.pixels.size(), false);
    for (const auto& t : warp.triangles()) {
        const Point2 a = dst[t[0]], b = dst[t[1]], c = dst[t[2]];
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}))));
        const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}))));
        const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}))));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const auto idx = static_cast<std::size_t>(y) * static_cast<std::size_t>(img.width) +
                                 static_cast<std::size_t>(x);
                if (done[idx]) continue;
                const Point2 p{static_cast<double>(x), static_cast<double>(y)};
                const auto w = warp.barycentric(p, dst, t);
                if (!w) continue;
                const double sx = (*w)[0] * src[t[0]].x + (*w)[1] * src[t[1]].x + (*w)[2] * src[t[2]].x;
                const double sy = (*w)[0] * src[t[0]].y + (*w)[1] * src[t[1]].y + (*w)[2] * src[t[2]].y;
                out.pixels[idx] = to_byte(sample_bilinear(img, sx, sy, fill));
                done[idx] = true;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pyramid

inline constexpr int pyramid_min_side = 32;

/// floor(n / 1.5) in exact integer arithmetic.
constexpr int pyramid_shrink(int n) { return (2 * n) / 3; }

struct Pyramid {
    std::vector<GrayImage> levels;
};

/// Level sizes for a w x h input: each level is floor(previous / 1.5) per
/// side; no level is derived from one with a side below 32, so the last
/// level may be as small as 21.
inline std::vector<std::pair<int, int>> pyramid_sizes(int w, int h, int levels) {
    if (levels < 1) throw ValidationError("pyramid needs at least one level");
    std::vector<std::pair<int, int>> sizes{{w, h}};
    while (static_cast<int>(sizes.size()) < levels) {
        const auto [pw, ph] = sizes.back();
        if (pw < pyramid_min_side || ph < pyramid_min_side) break;
        sizes.emplace_back(pyramid_shrink(pw), pyramid_shrink(ph));
    }
    return sizes;
}

/// [1 2 1]/4 separable smoothing with replicated borders.
inline RealImage binomial_blur(const RealImage& img) {
    RealImage tmp(img.width, img.height), out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            tmp.at(x, y) = 0.25 * img.clamped(x - 1, y) + 0.5 * img.at(x, y) + 0.25 * img.clamped(x + 1, y);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(x, y) = 0.25 * tmp.clamped(x, y - 1) + 0.5 * tmp.at(x, y) + 0.25 * tmp.clamped(x, y + 1);
    return out;
}

inline Pyramid build_pyramid(const GrayImage& img, int levels = 4) {
    const auto sizes = pyramid_sizes(img.width, img.height, levels);
    Pyramid pyr;
    pyr.levels.push_back(img);
    for (std::size_t k = 1; k < sizes.size(); ++k) {
        const auto& prev = pyr.levels.back();
        const RealImage smooth = binomial_blur(RealImage(prev));
        const auto [w, h] = sizes[k];
        const double sx = static_cast<double>(prev.width) / w;
        const double sy = static_cast<double>(prev.height) / h;
        GrayImage next(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                next.at(x, y) = to_byte(sample_bilinear(smooth, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5, 0.0));
        pyr.levels.push_back(std::move(next));
    }
    return pyr;
}

}  // namespace morphobench

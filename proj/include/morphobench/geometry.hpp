#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "core.hpp"

namespace morphobench {

inline constexpr std::size_t landmark_count = 21;
inline constexpr std::size_t structural_length = 1134;
inline constexpr std::size_t polar_block_length = 2 * landmark_count;                     // 42
inline constexpr std::size_t cross_block_length = 2 * landmark_count * landmark_count;    // 882
inline constexpr std::size_t distance_block_length = landmark_count * (landmark_count - 1) / 2;  // 210
static_assert(polar_block_length + cross_block_length + distance_block_length == structural_length);

inline constexpr std::size_t minutiae_retained = 16;
inline constexpr std::size_t fingerprint_length = 3 * minutiae_retained;

/// Canonical frame: pupils at (-50, 0) and (+50, 0).
inline constexpr double canonical_pupil_distance = 100.0;

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
    friend bool operator==(const Point2&, const Point2&) = default;
};

inline double norm(Point2 p) { return std::hypot(p.x, p.y); }

/// Polar form of a difference vector: radius and angle in (-pi, pi],
/// with the angle of a zero vector defined as 0.
inline std::pair<double, double> polar(Point2 d) {
    const double r = std::hypot(d.x, d.y);
    if (r == 0.0) return {0.0, 0.0};
    double a = std::atan2(d.y, d.x);
    if (a <= -pi) a = pi;
    return {r, a};
}

struct PupilIndices {
    std::size_t left = 5;
    std::size_t right = 8;
};

struct LandmarkSet {
    std::vector<Point2> points;
    PupilIndices pupils;

    [[nodiscard]] Point2 left_pupil() const { return points.at(pupils.left); }
    [[nodiscard]] Point2 right_pupil() const { return points.at(pupils.right); }
};

inline void validate(const LandmarkSet& s) {
    if (s.points.size() != landmark_count)
        throw ValidationError("expected 21 points, got " + std::to_string(s.points.size()));
    if (s.pupils.left == s.pupils.right || s.pupils.left >= landmark_count ||
        s.pupils.right >= landmark_count)
        throw ValidationError("pupil indices must be distinct and below 21");
    for (const auto& p : s.points)
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw ValidationError("landmark coordinates must be finite");
}

/// z -> a*z + b in complex form: rotation + uniform scale + translation.
class SimilarityTransform {
public:
    SimilarityTransform() = default;

    static SimilarityTransform from_params(double rotation, double scale, Point2 translation) {
        if (!(scale > 0.0)) throw ValidationError("similarity scale must be positive");
        return SimilarityTransform(std::polar(scale, rotation), {translation.x, translation.y});
    }

    /// The unique similarity mapping (src_a, src_b) onto (dst_a, dst_b).
    static SimilarityTransform from_pairs(Point2 src_a, Point2 src_b, Point2 dst_a, Point2 dst_b) {
        const std::complex<double> sa{src_a.x, src_a.y}, sb{src_b.x, src_b.y};
        const std::complex<double> da{dst_a.x, dst_a.y}, db{dst_b.x, dst_b.y};
        if (sa == sb) throw DegenerateInputError("coincident reference points");
        if (da == db) throw DegenerateInputError("coincident target points");
        const auto a = (db - da) / (sb - sa);
        return SimilarityTransform(a, da - a * sa);
    }

    [[nodiscard]] Point2 apply(Point2 p) const {
        const auto z = a_ * std::complex<double>{p.x, p.y} + b_;
        return {z.real(), z.imag()};
    }

    [[nodiscard]] SimilarityTransform inverse() const {
        const auto ai = 1.0 / a_;
        return SimilarityTransform(ai, -ai * b_);
    }

    /// (this ∘ other)(p) = this(other(p)).
    [[nodiscard]] SimilarityTransform compose(const SimilarityTransform& other) const {
        return SimilarityTransform(a_ * other.a_, a_ * other.b_ + b_);
    }

    [[nodiscard]] double rotation() const { return std::arg(a_); }
    [[nodiscard]] double scale() const { return std::abs(a_); }
    [[nodiscard]] Point2 translation() const { return {b_.real(), b_.imag()}; }

private:
    SimilarityTransform(std::complex<double> a, std::complex<double> b) : a_(a), b_(b) {}

    std::complex<double> a_{1.0, 0.0};
    std::complex<double> b_{0.0, 0.0};
};

inline LandmarkSet transform(const LandmarkSet& s, const SimilarityTransform& t) {
    LandmarkSet out = s;
    for (auto& p : out.points) p = t.apply(p);
    return out;
}

/// Maps the pupils onto (-50, 0) and (+50, 0). The pupil coordinates of the
/// result are assigned exactly rather than left to rounding.
inline std::pair<LandmarkSet, SimilarityTransform> normalize_landmarks(const LandmarkSet& raw) {
    validate(raw);
    const Point2 left_target{-canonical_pupil_distance / 2, 0.0};
    const Point2 right_target{canonical_pupil_distance / 2, 0.0};
    if (raw.left_pupil() == raw.right_pupil())
        throw DegenerateInputError("pupils are coincident; cannot normalize landmarks");
    const auto t = SimilarityTransform::from_pairs(raw.left_pupil(), raw.right_pupil(), left_target,
                                                   right_target);
    LandmarkSet out = transform(raw, t);
    out.points[out.pupils.left] = left_target;
    out.points[out.pupils.right] = right_target;
    return {std::move(out), t};
}

struct MeanShape {
    std::vector<Point2> points;
};

inline MeanShape mean_shape(std::span<const LandmarkSet> sets) {
    if (sets.empty()) throw ValidationError("mean shape needs at least one landmark set");
    MeanShape m{std::vector<Point2>(landmark_count)};
    for (const auto& s : sets) {
        validate(s);
        for (std::size_t i = 0; i < landmark_count; ++i) m.points[i] = m.points[i] + s.points[i];
    }
    const double inv = 1.0 / static_cast<double>(sets.size());
    for (auto& p : m.points) p = inv * p;
    return m;
}

/// Layout: [polar(p_i - m_i) for i | polar(p_i - m_j) for i, j row-major |
/// |p_i - p_j| for i < j lexicographic]. Each polar entry is (radius, angle).
inline Vector structural_feature(const LandmarkSet& s, const MeanShape& m) {
    validate(s);
    if (m.points.size() != landmark_count) throw ValidationError("mean shape must have 21 points");
    Vector f(static_cast<Index>(structural_length));
    Index k = 0;
    for (std::size_t i = 0; i < landmark_count; ++i) {
        const auto [r, a] = polar(s.points[i] - m.points[i]);
        f[k++] = r;
        f[k++] = a;
    }
    for (std::size_t i = 0; i < landmark_count; ++i) {
        for (std::size_t j = 0; j < landmark_count; ++j) {
            const auto [r, a] = polar(s.points[i] - m.points[j]);
            f[k++] = r;
            f[k++] = a;
        }
    }
    for (std::size_t i = 0; i < landmark_count; ++i)
        for (std::size_t j = i + 1; j < landmark_count; ++j) f[k++] = norm(s.points[i] - s.points[j]);
    return f;
}

struct Minutia {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;
    std::optional<double> confidence;
};

/// Sorts by (y, x, theta) ascending.
inline bool canonical_less(const Minutia& a, const Minutia& b) {
    return std::tie(a.y, a.x, a.theta) < std::tie(b.y, b.x, b.theta);
}

/// Keeps 16 minutiae (highest confidence when every minutia has one, else the
/// first 16 in canonical order) and emits their (x, y, theta) in canonical order.
inline Vector fingerprint_feature(std::span<const Minutia> minutiae) {
    if (minutiae.size() < minutiae_retained)
        throw ValidationError("fingerprint feature needs at least 16 minutiae, got " +
                              std::to_string(minutiae.size()));
    std::vector<Minutia> kept(minutiae.begin(), minutiae.end());
    const bool scored = std::all_of(kept.begin(), kept.end(),
                                    [](const Minutia& m) { return m.confidence.has_value(); });
    if (scored) {
        std::sort(kept.begin(), kept.end(), [](const Minutia& a, const Minutia& b) {
            if (*a.confidence != *b.confidence) return *a.confidence > *b.confidence;
            return canonical_less(a, b);
        });
    } else {
        std::sort(kept.begin(), kept.end(), canonical_less);
    }
    kept.resize(minutiae_retained);
    std::sort(kept.begin(), kept.end(), canonical_less);

    Vector f(static_cast<Index>(fingerprint_length));
    for (std::size_t i = 0; i < minutiae_retained; ++i) {
        f[static_cast<Index>(3 * i)] = kept[i].x;
        f[static_cast<Index>(3 * i + 1)] = kept[i].y;
        f[static_cast<Index>(3 * i + 2)] = kept[i].theta;
    }
    return f;
}

}  // namespace morphobench

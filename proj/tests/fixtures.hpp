#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "morphobench/core.hpp"
#include "morphobench/geometry.hpp"
#include "morphobench/image.hpp"

namespace fixtures {

using namespace morphobench;

/// Face-like 21-point set: template points jittered, pupils at indices 5 and 8.
inline LandmarkSet random_landmarks(Rng& rng, double scale = 1.0) {
    LandmarkSet s;
    for (std::size_t i = 0; i < landmark_count; ++i)
        s.points.push_back({scale * (100.0 + rng.uniform(-60.0, 60.0)), scale * (100.0 + rng.uniform(-60.0, 60.0))});
    s.points[5] = {scale * (70.0 + rng.uniform(-3.0, 3.0)), scale * (80.0 + rng.uniform(-3.0, 3.0))};
    s.points[8] = {scale * (130.0 + rng.uniform(-3.0, 3.0)), scale * (80.0 + rng.uniform(-3.0, 3.0))};
    return s;
}

inline Matrix random_matrix(Rng& rng, Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

inline Vector random_vector(Rng& rng, Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

inline GrayImage random_image(Rng& rng, int w, int h) {
    GrayImage img(w, h);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("morphobench_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace fixtures

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace morphobench {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Error categories surface as process exit codes in the CLI.
enum class ErrorCategory : int {
    config = 2,
    io = 3,
    validation = 4,
    degenerate = 5,
    dimension = 6,
    convergence = 7,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    [[nodiscard]] ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorCategory::io, w) {}
};
struct ValidationError : Error {
    explicit ValidationError(const std::string& w) : Error(ErrorCategory::validation, w) {}
};
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& w) : Error(ErrorCategory::degenerate, w) {}
};
struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error(ErrorCategory::dimension, w) {}
};

/// Raised by iterative solvers that hit their sweep cap; carries the last gap.
struct ConvergenceError : Error {
    ConvergenceError(const std::string& w, double final_gap)
        : Error(ErrorCategory::convergence, w), gap(final_gap) {}
    double gap;
};

/// Receives non-fatal diagnostics; defaults to stderr. Replace to capture or silence.
inline std::function<void(const std::string&)>& warning_sink() {
    static std::function<void(const std::string&)> sink = [](const std::string& msg) {
        std::cerr << "warning: " << msg << '\n';
    };
    return sink;
}

inline void warn(const std::string& msg) {
    static std::mutex m;
    std::lock_guard lock(m);
    if (warning_sink()) warning_sink()(msg);
}

inline constexpr double pi = std::numbers::pi;

// Deterministic random numbers. The standard distributions are
// implementation-defined, so everything that must be bit-reproducible across
// toolchains draws from these helpers instead.

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Mixes a parent seed with a stream index into an independent child seed.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) noexcept {
    return splitmix64(splitmix64(parent) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

/// xoshiro256** seeded through splitmix64.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) noexcept {
        std::uint64_t s = seed;
        for (auto& w : state_) {
            s = splitmix64(s);
            w = s;
        }
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        // Lemire's nearly-divisionless method.
        __uint128_t m = static_cast<__uint128_t>((*this)()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<__uint128_t>((*this)()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal via Box-Muller (one value per call; the pair mate is cached).
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * pi * u2);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4]{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw ValidationError(std::string(what) + " contains non-finite values");
}

inline void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) throw ValidationError(std::string(what) + " contains non-finite values");
}

/// Copies the listed rows of `m` into a new matrix.
inline Matrix select_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

template <typename T>
std::vector<T> select(const std::vector<T>& v, const std::vector<Index>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace morphobench

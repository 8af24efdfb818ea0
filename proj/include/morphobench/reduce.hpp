#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <lapacke.h>

#include "core.hpp"

// OpenBLAS threads would contend with the fold workers; absent elsewhere.
extern "C" void openblas_set_num_threads(int) __attribute__((weak));

namespace morphobench {

/// Principal axes of a training matrix. `components` is d x k with
/// orthonormal columns ordered by decreasing eigenvalue.
struct PcaModel {
    Vector mean;
    Matrix components;
    Vector eigenvalues;
    double total_variance = 0.0;

    [[nodiscard]] Index input_dim() const { return mean.size(); }
    [[nodiscard]] Index output_dim() const { return components.cols(); }

    [[nodiscard]] Matrix transform(const Matrix& x) const {
        if (x.cols() != input_dim())
            throw DimensionError("PCA expects " + std::to_string(input_dim()) + " columns, got " +
                                 std::to_string(x.cols()));
        return (x.rowwise() - mean.transpose()) * components;
    }

    [[nodiscard]] Vector transform(const Vector& x) const {
        if (x.size() != input_dim()) throw DimensionError("PCA input length mismatch");
        return components.transpose() * (x - mean);
    }

    [[nodiscard]] Matrix reconstruct(const Matrix& z) const {
        if (z.cols() != output_dim()) throw DimensionError("PCA reconstruction dimension mismatch");
        return (z * components.transpose()).rowwise() + mean.transpose();
    }

    /// The leading k components (nested: PCA at k is a prefix of PCA at k' > k).
    [[nodiscard]] PcaModel truncated(Index k) const {
        k = std::min(k, output_dim());
        return {mean, components.leftCols(k), eigenvalues.head(k), total_variance};
    }

    [[nodiscard]] Vector explained_variance_ratio() const {
        if (total_variance <= 0.0) return Vector::Zero(eigenvalues.size());
        return eigenvalues / total_variance;
    }
};

namespace detail {

/// Flips each column so its largest-magnitude entry (first on ties) is positive.
inline void fix_signs(Matrix& vecs) {
    for (Index c = 0; c < vecs.cols(); ++c) {
        Index best = 0;
        for (Index r = 1; r < vecs.rows(); ++r)
            if (std::abs(vecs(r, c)) > std::abs(vecs(best, c))) best = r;
        if (vecs(best, c) < 0) vecs.col(c) *= -1.0;
    }
}

/// Leading k eigenpairs of a symmetric matrix, eigenvalues descending.
/// Only the requested eigenvectors are computed (LAPACK dsyevr).
inline std::pair<Vector, Matrix> top_eigen(const Matrix& sym, Index k) {
    static const bool single_threaded_blas = [] {
        if (openblas_set_num_threads) openblas_set_num_threads(1);
        return true;
    }();
    (void)single_threaded_blas;
    const Index n = sym.rows();
    if (k < 1 || k > n) throw DimensionError("cannot take " + std::to_string(k) + " eigenpairs of a " +
                                             std::to_string(n) + " x " + std::to_string(n) + " matrix");
    Matrix a = sym;
    Vector w(n);
    Matrix z(n, k);
    std::vector<lapack_int> support(static_cast<std::size_t>(2 * k));
    lapack_int found = 0;
    const auto ln = static_cast<lapack_int>(n);
    const lapack_int info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', ln, a.data(), ln, 0.0, 0.0,
                                           ln - static_cast<lapack_int>(k) + 1, ln, 0.0, &found, w.data(), z.data(),
                                           ln, support.data());
    if (info != 0 || found != static_cast<lapack_int>(k)) throw DegenerateInputError("eigendecomposition failed");
    Vector vals(k);
    Matrix vecs(n, k);
    for (Index i = 0; i < k; ++i) {
        vals[i] = w[k - 1 - i];
        vecs.col(i) = z.col(k - 1 - i);
    }
    return {vals, vecs};
}

/// Extends `basis` (orthonormal columns, first `filled` valid) to `target`
/// columns using standard basis vectors.
inline void complete_basis(Matrix& basis, Index filled) {
    const Index d = basis.rows();
    for (Index j = 0; j < d && filled < basis.cols(); ++j) {
        Vector v = Vector::Unit(d, j);
        for (int pass = 0; pass < 2; ++pass)
            for (Index c = 0; c < filled; ++c) v -= basis.col(c).dot(v) * basis.col(c);
        const double nv = v.norm();
        if (nv > 1e-6) basis.col(filled++) = v / nv;
    }
}

}  // namespace detail

/// Fits PCA with k' = min(k, n-1, d) components. Uses the n x n Gram matrix
/// when d > n.
inline PcaModel pca_fit(const Matrix& x, Index k) {
    const Index n = x.rows();
    const Index d = x.cols();
    if (n < 2) throw ValidationError("PCA needs at least 2 samples");
    if (k < 1) throw ValidationError("PCA target dimension must be at least 1");
    if (d < 1) throw ValidationError("PCA needs at least one feature");
    require_finite(x, "PCA input");
    const Index kk = std::min({k, n - 1, d});

    PcaModel m;
    m.mean = x.colwise().mean().transpose();
    const Matrix xc = x.rowwise() - m.mean.transpose();
    const double denom = static_cast<double>(n - 1);
    m.total_variance = xc.squaredNorm() / denom;

    if (d <= n) {
        const Matrix cov = (xc.transpose() * xc) / denom;
        auto [vals, vecs] = detail::top_eigen(cov, kk);
        m.eigenvalues = vals.cwiseMax(0.0);
        m.components = std::move(vecs);
    } else {
        const Matrix gram = xc * xc.transpose();
        auto [vals, vecs] = detail::top_eigen(gram, kk);
        const double tol = std::max(vals[0], 0.0) * 1e-12 * static_cast<double>(std::max(n, d));
        m.components.resize(d, kk);
        m.eigenvalues = Vector::Zero(kk);
        Index filled = 0;
        for (Index i = 0; i < kk; ++i) {
            if (vals[i] <= tol) break;
            m.components.col(i) = xc.transpose() * vecs.col(i) / std::sqrt(vals[i]);
            m.eigenvalues[i] = vals[i] / denom;
            ++filled;
        }
        detail::complete_basis(m.components, filled);
    }
    detail::fix_signs(m.components);
    return m;
}

/// Projects every sample onto the leading principal axes of the `train` rows,
/// working only from the inner-product matrix `gram` (gram(i, j) = <x_i, x_j>).
/// Equivalent to pca_fit on the training rows followed by transform, without
/// touching the (possibly very wide) feature matrix. The output dimension is
/// min(k, m-1, numerical rank of the centred training Gram matrix).
inline Matrix gram_pca_project(const Matrix& gram, const std::vector<Index>& train, Index k) {
    const auto m = static_cast<Index>(train.size());
    if (m < 2) throw ValidationError("PCA needs at least 2 samples");
    if (gram.rows() != gram.cols()) throw DimensionError("Gram matrix must be square");
    const Index n_all = gram.rows();

    Matrix ktt(m, m);
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j) ktt(i, j) = gram(train[static_cast<std::size_t>(i)], train[static_cast<std::size_t>(j)]);
    const Vector row_mean = ktt.rowwise().mean();
    const double all_mean = row_mean.mean();
    Matrix centred = ktt;
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j) centred(i, j) = ktt(i, j) - row_mean[i] - row_mean[j] + all_mean;

    const Index kk = std::min(k, m - 1);
    auto [vals, vecs] = detail::top_eigen(centred, kk);
    const double tol = std::max(vals[0], 0.0) * 1e-12 * static_cast<double>(m);
    Index rank = 0;
    while (rank < kk && vals[rank] > tol) ++rank;
    detail::fix_signs(vecs);

    // p_i(x) = u_i' (K_t,x - K_tt 1/m) / sqrt(lambda_i); u_i is orthogonal to 1.
    Matrix kt_all(m, n_all);
    for (Index i = 0; i < m; ++i) kt_all.row(i) = gram.row(train[static_cast<std::size_t>(i)]);
    kt_all.colwise() -= row_mean;
    Matrix out = kt_all.transpose() * vecs.leftCols(rank);
    for (Index i = 0; i < rank; ++i) out.col(i) /= std::sqrt(vals[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Dimension selection across traits

enum class SelectionMode { maximize, minimize };

/// Scores m(i, j) for trait i at candidate dimension dims[j].
struct AccuracyMatrix {
    std::vector<int> dims;
    Matrix values;
};

/// Relative tolerance used when comparing column sums for ties.
inline constexpr double selection_tie_tolerance = 1e-12;

/// Column sums of the row-normalised score matrix; higher is better in both modes.
inline Vector normalized_column_sums(const AccuracyMatrix& acc, SelectionMode mode) {
    const Matrix& m = acc.values;
    if (m.rows() == 0 || m.cols() == 0) throw ValidationError("accuracy matrix is empty");
    if (static_cast<std::size_t>(m.cols()) != acc.dims.size())
        throw DimensionError("accuracy matrix columns do not match candidate dimensions");
    require_finite(m, "accuracy matrix");
    Vector sums = Vector::Zero(m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        if (mode == SelectionMode::maximize) {
            const double best = m.row(i).maxCoeff();
            if (best == 0.0) throw DegenerateInputError("trait row " + std::to_string(i) + " has maximum 0");
            for (Index j = 0; j < m.cols(); ++j) sums[j] += m(i, j) / best;
        } else {
            if ((m.row(i).array() <= 0.0).any())
                throw ValidationError("minimize mode needs strictly positive entries");
            const double best = m.row(i).minCoeff();
            for (Index j = 0; j < m.cols(); ++j) sums[j] += best / m(i, j);
        }
    }
    return sums;
}

/// Normalises each trait row by its best entry, sums per dimension, and
/// returns the dimension with the largest sum (ties: smallest dimension).
inline int select_dimension(const AccuracyMatrix& acc, SelectionMode mode = SelectionMode::maximize) {
    const Vector sums = normalized_column_sums(acc, mode);
    const double top = sums.maxCoeff();
    const double slack = selection_tie_tolerance * std::max(1.0, std::abs(top));
    int chosen = 0;
    bool found = false;
    for (Index j = 0; j < sums.size(); ++j) {
        if (sums[j] >= top - slack) {
            const int dim = acc.dims[static_cast<std::size_t>(j)];
            if (!found || dim < chosen) chosen = dim;
            found = true;
        }
    }
    return chosen;
}

// ---------------------------------------------------------------------------
// Two-feature fusion

struct FusionResult {
    Matrix fused;
    PcaModel reducer_a;
    PcaModel reducer_b;
    PcaModel reducer_out;
};

/// Reduces A and B separately, concatenates, and reduces the concatenation.
inline FusionResult fuse_features(const Matrix& a, const Matrix& b, Index k_each = 400, Index k_out = 50) {
    if (a.rows() != b.rows()) throw DimensionError("fusion inputs have different sample counts");
    FusionResult r;
    r.reducer_a = pca_fit(a, k_each);
    r.reducer_b = pca_fit(b, k_each);
    const Matrix za = r.reducer_a.transform(a);
    const Matrix zb = r.reducer_b.transform(b);
    Matrix joined(a.rows(), za.cols() + zb.cols());
    joined << za, zb;
    r.reducer_out = pca_fit(joined, k_out);
    r.fused = r.reducer_out.transform(joined);
    return r;
}

}  // namespace morphobench

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "morphobench/reduce.hpp"

using namespace morphobench;

namespace {

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Straight transcription of the normalise-and-sum rule with smallest-dimension ties.
int brute_select(const Matrix& m, const std::vector<int>& dims, bool maximize) {
    std::vector<double> n(dims.size(), 0.0);
    for (Index i = 0; i < m.rows(); ++i) {
        double best = m(i, 0);
        for (Index j = 1; j < m.cols(); ++j) best = maximize ? std::max(best, m(i, j)) : std::min(best, m(i, j));
        for (Index j = 0; j < m.cols(); ++j) n[static_cast<std::size_t>(j)] += maximize ? m(i, j) / best : best / m(i, j);
    }
    const double top = *std::max_element(n.begin(), n.end());
    int chosen = 1 << 30;
    for (std::size_t j = 0; j < n.size(); ++j)
        if (n[j] >= top - 1e-12 * std::max(1.0, top)) chosen = std::min(chosen, dims[j]);
    return chosen;
}

Matrix pairwise_distances(const Matrix& x) {
    Matrix d(x.rows(), x.rows());
    for (Index i = 0; i < x.rows(); ++i)
        for (Index j = 0; j < x.rows(); ++j) d(i, j) = (x.row(i) - x.row(j)).norm();
    return d;
}

}  // namespace

TEST(Pca, LineYEqualsXHasDiagonalComponentAndFullRatio) {
    Matrix x(5, 2);
    for (int i = 0; i < 5; ++i) x.row(i) << i - 2.0, i - 2.0;
    const auto m = pca_fit(x, 1);
    EXPECT_NEAR(std::abs(m.components(0, 0)), 1 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(std::abs(m.components(1, 0)), 1 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(m.explained_variance_ratio()[0], 1.0, 1e-12);
}

TEST(Pca, ThreePointsMatchClosedFormTwoByTwoEigen) {
    Matrix x(3, 2);
    x << 0, 0, 2, 1, 4, 5;
    // Sample covariance entries, computed by hand.
    const double mx = 2, my = 2;
    double a = 0, b = 0, c = 0;
    for (int i = 0; i < 3; ++i) {
        a += (x(i, 0) - mx) * (x(i, 0) - mx) / 2;
        b += (x(i, 0) - mx) * (x(i, 1) - my) / 2;
        c += (x(i, 1) - my) * (x(i, 1) - my) / 2;
    }
    const double tr = a + c, disc = std::sqrt((a - c) * (a - c) + 4 * b * b);
    const auto m = pca_fit(x, 2);
    ASSERT_EQ(m.output_dim(), 2);
    EXPECT_NEAR(m.eigenvalues[0], (tr + disc) / 2, 1e-9);
    EXPECT_NEAR(m.eigenvalues[1], (tr - disc) / 2, 1e-9);
    // Leading eigenvector of [[a,b],[b,c]] is parallel to (b, l1 - a).
    const double l1 = (tr + disc) / 2;
    Vector v(2);
    v << b, l1 - a;
    v.normalize();
    EXPECT_NEAR(std::abs(v.dot(m.components.col(0))), 1.0, 1e-9);
}

TEST(Pca, ComponentsAreOrthonormalAndEigenvaluesDescend) {
    Rng rng(51);
    for (auto [n, d] : {std::pair<Index, Index>{30, 8}, {12, 40}, {50, 50}}) {
        const auto m = pca_fit(fixtures::random_matrix(rng, n, d), 100);
        EXPECT_EQ(m.output_dim(), std::min(n - 1, d));
        EXPECT_LE(max_abs(m.components.transpose() * m.components - Matrix::Identity(m.output_dim(), m.output_dim())), 1e-8);
        for (Index i = 1; i < m.eigenvalues.size(); ++i) EXPECT_LE(m.eigenvalues[i], m.eigenvalues[i - 1]);
    }
}

TEST(Pca, FullRankReconstructionIsExact) {
    Rng rng(52);
    const Matrix x = fixtures::random_matrix(rng, 20, 6);
    const auto m = pca_fit(x, 6);
    EXPECT_LE(max_abs(m.reconstruct(m.transform(x)) - x), 1e-6);
}

TEST(Pca, ReconstructionErrorIsNonIncreasingInK) {
    Rng rng(53);
    for (auto [n, d] : {std::pair<Index, Index>{15, 10}, {10, 30}}) {
        const Matrix x = fixtures::random_matrix(rng, n, d);
        const auto full = pca_fit(x, std::min(n - 1, d));
        double prev = std::numeric_limits<double>::infinity();
        for (Index k = 1; k <= full.output_dim(); ++k) {
            const auto m = full.truncated(k);
            const double err = (m.reconstruct(m.transform(x)) - x).squaredNorm();
            EXPECT_LE(err, prev + 1e-9);
            prev = err;
        }
    }
}

TEST(Pca, TransformOfMeanIsZeroAndTransformIsAffine) {
    Rng rng(54);
    const auto m = pca_fit(fixtures::random_matrix(rng, 25, 7), 4);
    EXPECT_LE(m.transform(m.mean).cwiseAbs().maxCoeff(), 1e-12);
    const Vector x = fixtures::random_vector(rng, 7), y = fixtures::random_vector(rng, 7);
    const double a = 0.3;
    EXPECT_LE((m.transform(Vector(a * x + (1 - a) * y)) - (a * m.transform(x) + (1 - a) * m.transform(y))).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Pca, TransformMatchesDirectProduct) {
    Rng rng(55);
    const Matrix fit = fixtures::random_matrix(rng, 12, 8);
    const auto m = pca_fit(fit, 3);
    const Matrix x = fixtures::random_matrix(rng, 5, 8);
    Matrix direct(5, m.output_dim());
    for (Index i = 0; i < 5; ++i)
        for (Index j = 0; j < m.output_dim(); ++j) {
            double s = 0;
            for (Index c = 0; c < 8; ++c) s += (x(i, c) - m.mean[c]) * m.components(c, j);
            direct(i, j) = s;
        }
    EXPECT_LE(max_abs(m.transform(x) - direct), 1e-9);
}

TEST(Pca, RejectsBadInput) {
    EXPECT_THROW(pca_fit(Matrix::Zero(1, 3), 1), ValidationError);
    EXPECT_THROW(pca_fit(Matrix::Zero(4, 3), 0), ValidationError);
    Matrix bad = Matrix::Zero(4, 3);
    bad(1, 1) = std::nan("");
    EXPECT_THROW(pca_fit(bad, 2), ValidationError);
    const auto m = pca_fit(Matrix::Identity(4, 3), 2);
    EXPECT_THROW((void)m.transform(Matrix(Matrix::Zero(2, 4))), DimensionError);
}

TEST(Pca, GramProjectionMatchesExplicitFitUpToSign) {
    Rng rng(56);
    const Matrix x = fixtures::random_matrix(rng, 30, 60);
    std::vector<Index> train;
    for (Index i = 0; i < 30; i += 3) train.push_back(i), train.push_back(i + 1);
    Matrix xt(static_cast<Index>(train.size()), 60);
    for (std::size_t i = 0; i < train.size(); ++i) xt.row(static_cast<Index>(i)) = x.row(train[i]);
    const auto m = pca_fit(xt, 8);
    const Matrix a = m.transform(x);
    const Matrix b = gram_pca_project(x * x.transpose(), train, 8);
    ASSERT_EQ(a.cols(), b.cols());
    for (Index c = 0; c < a.cols(); ++c) {
        const double s = a.col(c).dot(b.col(c)) >= 0 ? 1.0 : -1.0;
        EXPECT_LE((a.col(c) - s * b.col(c)).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(SelectDimension, WorkedExamples) {
    Matrix m(2, 2);
    m << 0.9, 0.6, 0.5, 0.8;
    const AccuracyMatrix acc{{5, 10}, m};
    const Vector n = normalized_column_sums(acc, SelectionMode::maximize);
    EXPECT_NEAR(n[0], 1.625, 1e-12);
    EXPECT_NEAR(n[1], 0.6 / 0.9 + 1.0, 1e-12);
    EXPECT_EQ(select_dimension(acc), 10);
    m << 0.8, 0.4, 0.4, 0.8;
    EXPECT_EQ(select_dimension({{5, 10}, m}), 5);
}

TEST(SelectDimension, SingleRowPicksBestEntry) {
    Matrix m(1, 4);
    m << 0.6, 0.7, 0.9, 0.8;
    EXPECT_EQ(select_dimension({{5, 10, 15, 20}, m}), 15);
    EXPECT_EQ(select_dimension({{5, 10, 15, 20}, m}, SelectionMode::minimize), 5);
}

TEST(SelectDimension, MatchesBruteForceWithTies) {
    Rng rng(57);
    const std::vector<int> dims{5, 10, 15, 20, 25, 30, 35, 40, 50};
    for (int t = 0; t < 100; ++t) {
        const Index rows = 1 + static_cast<Index>(rng.below(20));
        Matrix m(rows, 9);
        const bool coarse = t % 3 == 0;  // few distinct levels: ties are common
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < 9; ++j)
                m(i, j) = coarse ? 0.25 * static_cast<double>(1 + rng.below(4)) : rng.uniform(0.3, 1.0);
        if (t % 10 == 1) m.col(2) = m.col(7);
        if (t % 10 == 2) m.setConstant(0.5);
        EXPECT_EQ(select_dimension({dims, m}), brute_select(m, dims, true)) << t;
        EXPECT_EQ(select_dimension({dims, m}, SelectionMode::minimize), brute_select(m, dims, false)) << t;
    }
}

TEST(SelectDimension, InvariantToPositiveRowScaling) {
    Rng rng(58);
    const std::vector<int> dims{2, 5, 8, 10, 15};
    for (int t = 0; t < 50; ++t) {
        Matrix m(6, 5);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(0.1, 1.0);
        const int a = select_dimension({dims, m}), b = select_dimension({dims, m}, SelectionMode::minimize);
        m.row(static_cast<Index>(rng.below(6))) *= rng.uniform(0.2, 5.0);
        EXPECT_EQ(select_dimension({dims, m}), a);
        EXPECT_EQ(select_dimension({dims, m}, SelectionMode::minimize), b);
    }
}

TEST(SelectDimension, RejectsDegenerateTables) {
    EXPECT_THROW(select_dimension({{5}, Matrix(0, 1)}), ValidationError);
    EXPECT_THROW(select_dimension({{5, 10}, Matrix::Zero(1, 3)}), DimensionError);
    EXPECT_THROW(select_dimension({{5, 10}, Matrix::Zero(1, 2)}), DegenerateInputError);
    EXPECT_THROW(select_dimension({{5, 10}, Matrix::Zero(1, 2)}, SelectionMode::minimize), ValidationError);
}

TEST(Fusion, DuplicatedInputPreservesDistancesUpToScale) {
    Rng rng(59);
    const Matrix a = fixtures::random_matrix(rng, 20, 6);
    const auto r = fuse_features(a, a, 400, 6);
    // [A A] has every distance scaled by sqrt(2); the outer PCA keeps all of them.
    EXPECT_LE(max_abs(pairwise_distances(r.fused) - std::sqrt(2.0) * pairwise_distances(a)), 1e-6);
}

TEST(Fusion, SmallCohortCapsBlockDimension) {
    Rng rng(60);
    const auto r = fuse_features(fixtures::random_matrix(rng, 10, 30), fixtures::random_matrix(rng, 10, 40));
    EXPECT_EQ(r.reducer_a.output_dim(), 9);
    EXPECT_EQ(r.reducer_b.output_dim(), 9);
    EXPECT_EQ(r.fused.rows(), 10);
    EXPECT_THROW(fuse_features(Matrix::Zero(4, 2), Matrix::Zero(5, 2)), DimensionError);
}

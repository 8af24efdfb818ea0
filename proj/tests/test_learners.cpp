#include <algorithm>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "morphobench/learners.hpp"

using namespace morphobench;

namespace {

/// Columns centred and divided by their population standard deviation.
Matrix standardize(const Matrix& x) {
    Matrix out = x;
    for (Index j = 0; j < x.cols(); ++j) {
        const double m = x.col(j).mean();
        double v = 0;
        for (Index i = 0; i < x.rows(); ++i) v += (x(i, j) - m) * (x(i, j) - m);
        const double sd = std::sqrt(v / static_cast<double>(x.rows()));
        for (Index i = 0; i < x.rows(); ++i) out(i, j) = (x(i, j) - m) / (sd > 0 ? sd : 1.0);
    }
    return out;
}

/// k nearest rows by a full scan and stable sort on (distance, index).
std::vector<Index> scan_nearest(const Matrix& pts, const Eigen::RowVectorXd& q, int k) {
    std::vector<Index> idx(static_cast<std::size_t>(pts.rows()));
    for (Index i = 0; i < pts.rows(); ++i) idx[static_cast<std::size_t>(i)] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
        return (pts.row(a) - q).squaredNorm() < (pts.row(b) - q).squaredNorm();
    });
    idx.resize(static_cast<std::size_t>(std::min<Index>(k, pts.rows())));
    return idx;
}

struct Blobs {
    Matrix x;
    Labels y;
};

Blobs blobs(std::uint64_t seed, std::size_t n, double gap) {
    Rng rng(seed);
    Blobs b{Matrix(static_cast<Index>(n), 2), Labels(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 2);
        b.y[i] = c;
        b.x(static_cast<Index>(i), 0) = rng.normal() + (c ? gap : 0.0);
        b.x(static_cast<Index>(i), 1) = rng.normal();
    }
    return b;
}

double accuracy(const Labels& a, const Labels& b) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
    return static_cast<double>(hit) / static_cast<double>(a.size());
}

RegressorSpec fixed(RegressorKind k) {
    RegressorSpec s;
    s.kind = k;
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Classifiers

TEST(Classifiers, SeparatedBlobsAreLearnedByEveryKind) {
    const auto train = blobs(71, 200, 6.0), test = blobs(72, 200, 6.0);
    for (auto k : classifier_order) {
        ClassifierSpec s;
        s.kind = k;
        s.seed = 5;
        const auto m = fit_classifier(s, train.x, train.y);
        EXPECT_GE(accuracy(m.predict(test.x), test.y), 0.95) << to_string(k);
    }
}

TEST(Classifiers, SingleClassTrainingAlwaysPredictsThatClass) {
    Rng rng(73);
    const Matrix x = fixtures::random_matrix(rng, 12, 3);
    for (auto k : classifier_order) {
        ClassifierSpec s;
        s.kind = k;
        for (int c : {0, 1}) {
            const auto p = fit_classifier(s, x, Labels(12, c)).predict(fixtures::random_matrix(rng, 7, 3));
            EXPECT_EQ(p, Labels(7, c)) << to_string(k);
        }
    }
}

TEST(Classifiers, EmptyProbeGivesEmptyLabels) {
    const auto b = blobs(74, 40, 3.0);
    for (auto k : classifier_order) {
        ClassifierSpec s;
        s.kind = k;
        EXPECT_TRUE(fit_classifier(s, b.x, b.y).predict(Matrix(0, 2)).empty());
    }
}

TEST(Classifiers, SameSeedSamePredictions) {
    const auto b = blobs(75, 80, 1.0);
    Rng rng(76);
    const Matrix probe = fixtures::random_matrix(rng, 50, 2);
    for (auto k : classifier_order) {
        ClassifierSpec s;
        s.kind = k;
        s.seed = 99;
        EXPECT_EQ(fit_classifier(s, b.x, b.y).predict(probe), fit_classifier(s, b.x, b.y).predict(probe));
    }
}

TEST(Classifiers, ProbeDimensionMismatchIsRejected) {
    const auto b = blobs(77, 20, 3.0);
    const auto m = fit_classifier({}, b.x, b.y);
    EXPECT_THROW((void)m.predict(Matrix::Zero(3, 5)), DimensionError);
    EXPECT_THROW(fit_classifier({}, b.x, Labels(20, 2)), ValidationError);
    EXPECT_THROW(fit_classifier({}, b.x, Labels(19, 0)), DimensionError);
    ClassifierSpec bad;
    bad.neighbors = 0;
    EXPECT_THROW(fit_classifier(bad, b.x, b.y), ConfigError);
}

TEST(Knn, HandBuiltNeighbourhoodVotesMajority) {
    Matrix x(7, 1);
    x << 0.0, 0.1, 0.2, 0.3, 0.4, 5.0, 6.0;
    const Labels y{1, 0, 1, 0, 1, 0, 0};
    // Five nearest to 0.2 are the first five points: three 1s and two 0s.
    EXPECT_EQ(fit_classifier({}, x, y).predict(Matrix::Constant(1, 1, 0.2)), Labels{1});
}

TEST(Knn, ClassifierMatchesBruteForceScan) {
    Rng rng(78);
    for (Index n : {10, 57, 200}) {
        const Matrix x = fixtures::random_matrix(rng, n, 3);
        Labels y(static_cast<std::size_t>(n));
        for (auto& v : y) v = static_cast<int>(rng.below(2));
        const Matrix probe = fixtures::random_matrix(rng, 40, 3);
        const auto pred = fit_classifier({}, x, y).predict(probe);
        // Same affine map the model applies, computed here from the training data.
        Matrix xs = standardize(x);
        Matrix ps = probe;
        for (Index j = 0; j < 3; ++j) {
            const double m = x.col(j).mean();
            const double sd = std::sqrt((x.col(j).array() - m).square().sum() / static_cast<double>(n));
            ps.col(j) = (probe.col(j).array() - m) / sd;
        }
        for (Index i = 0; i < 40; ++i) {
            const auto idx = scan_nearest(xs, ps.row(i), 5);
            int ones = 0;
            for (auto j : idx) ones += y[static_cast<std::size_t>(j)];
            EXPECT_EQ(pred[static_cast<std::size_t>(i)], 2 * ones > static_cast<int>(idx.size()) ? 1 : 0);
        }
    }
}

TEST(Gnb, MatchesHandComputedGaussianLikelihoods) {
    Matrix x(6, 2);
    x << 0, 1, 1, 0, 2, 2,  // class 0
        6, 5, 7, 7, 8, 6;   // class 1
    const Labels y{0, 0, 0, 1, 1, 1};
    Matrix probe(4, 2);
    probe << 3.9, 3.0, 4.3, 4.1, 1.0, 6.5, 5.5, 0.0;
    const auto pred = fit_classifier({ClassifierKind::gnb}, x, y).predict(probe);
    // Per-class mean and population variance per feature; equal priors.
    const double m0[2] = {1, 1}, m1[2] = {7, 6};
    const double v0[2] = {2.0 / 3, 2.0 / 3}, v1[2] = {2.0 / 3, 2.0 / 3};
    for (Index i = 0; i < 4; ++i) {
        double l0 = 0, l1 = 0;
        for (int j = 0; j < 2; ++j) {
            l0 += -0.5 * std::log(2 * pi * v0[j]) - std::pow(probe(i, j) - m0[j], 2) / (2 * v0[j]);
            l1 += -0.5 * std::log(2 * pi * v1[j]) - std::pow(probe(i, j) - m1[j], 2) / (2 * v1[j]);
        }
        EXPECT_EQ(pred[static_cast<std::size_t>(i)], l1 > l0 ? 1 : 0) << i;
    }
}

TEST(Dtree, EveryNodeSplitIsTheExhaustiveGiniOptimum) {
    Rng rng(83);
    const Index n = 200, d = 4;
    Matrix x(n, d);
    Labels y(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < d; ++j) x(i, j) = j % 2 ? std::floor(rng.uniform() * 6) : rng.normal();
        y[static_cast<std::size_t>(i)] = rng.uniform() < 0.3 + 0.4 * (x(i, 1) > 2);
    }
    ClassifierSpec spec;
    spec.kind = ClassifierKind::dtree;
    const auto model = fit_classifier(spec, x, y);
    const auto& tree = std::get<DecisionTree>(model.state());
    const Matrix xs = standardize(x);

    // rows reaching each node, by routing the training set
    std::vector<std::vector<Index>> reach(tree.nodes.size());
    for (Index i = 0; i < n; ++i) {
        std::size_t k = 0;
        for (;;) {
            reach[k].push_back(i);
            const auto& node = tree.nodes[k];
            if (node.feature < 0) break;
            k = static_cast<std::size_t>(xs(i, node.feature) <= node.threshold ? node.left : node.right);
        }
    }
    int internal = 0;
    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
        const auto& rows = reach[k];
        double best = std::numeric_limits<double>::infinity(), best_t = 0;
        int best_f = -1;
        for (Index f = 0; f < d; ++f) {
            std::vector<double> v;
            for (auto r : rows) v.push_back(xs(r, f));
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            for (std::size_t c = 0; c + 1 < v.size(); ++c) {
                const double t = 0.5 * (v[c] + v[c + 1]);
                double cnt[2][2] = {{0, 0}, {0, 0}};
                for (auto r : rows) cnt[xs(r, f) <= t ? 0 : 1][y[static_cast<std::size_t>(r)]] += 1;
                double imp = 0;
                for (auto& side : cnt) {
                    const double m = side[0] + side[1];
                    imp += m - (side[0] * side[0] + side[1] * side[1]) / m;
                }
                if (imp < best - 1e-12) {
                    best = imp;
                    best_f = static_cast<int>(f);
                    best_t = t;
                }
            }
        }
        long ones = 0;
        for (auto r : rows) ones += y[static_cast<std::size_t>(r)];
        const bool pure = ones == 0 || ones == static_cast<long>(rows.size());
        if (tree.nodes[k].feature < 0) {
            EXPECT_TRUE(pure || best_f < 0) << "node " << k;
            EXPECT_EQ(tree.nodes[k].label, 2 * ones > static_cast<long>(rows.size()) ? 1 : 0) << "node " << k;
            continue;
        }
        ++internal;
        EXPECT_EQ(tree.nodes[k].feature, best_f) << "node " << k;
        EXPECT_NEAR(tree.nodes[k].threshold, best_t, 1e-12) << "node " << k;
    }
    EXPECT_GT(internal, 10);
}

TEST(Forest, TreeCountAndSeedControlTheEnsemble) {
    const auto b = blobs(79, 60, 1.5);
    ClassifierSpec s{ClassifierKind::rforest, 5, 17, 3};
    const auto m = fit_classifier(s, b.x, b.y);
    EXPECT_EQ(std::get<detail::ForestState>(m.state()).trees.size(), 17U);
}

// ---------------------------------------------------------------------------
// Regressors

TEST(Ols, RecoversExactLine) {
    Matrix x(10, 1);
    Vector y(10);
    for (int i = 0; i < 10; ++i) x(i, 0) = i * 0.7 - 1, y[i] = 2 * x(i, 0) + 1;
    const auto c = fit_regressor(fixed(RegressorKind::ols), x, y).linear_coefficients();
    ASSERT_TRUE(c);
    EXPECT_NEAR(c->slopes[0], 2.0, 1e-8);
    EXPECT_NEAR(c->intercept, 1.0, 1e-8);
}

TEST(Pinv, AgreesWithOlsOnFullRankData) {
    Rng rng(80);
    const Matrix x = fixtures::random_matrix(rng, 40, 6);
    const Vector y = fixtures::random_vector(rng, 40);
    const auto a = fit_regressor(fixed(RegressorKind::ols), x, y);
    const auto b = fit_regressor(fixed(RegressorKind::pinv), x, y);
    EXPECT_LE((a.linear_coefficients()->slopes - b.linear_coefficients()->slopes).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(a.linear_coefficients()->intercept, b.linear_coefficients()->intercept, 1e-8);
}

TEST(Pinv, DuplicatedColumnGivesMinimumNormConsistentSolution) {
    Rng rng(81);
    Matrix x(20, 3);
    x.leftCols(2) = fixtures::random_matrix(rng, 20, 2);
    x.col(2) = x.col(1);
    const Vector y = 1.5 * x.col(0) - 2.0 * x.col(1);
    const auto m = fit_regressor(fixed(RegressorKind::pinv), x, y);
    EXPECT_LE((m.predict(x) - y).cwiseAbs().maxCoeff(), 1e-8);
    const Vector b = *m.standardized_coefficients();
    // Minimum norm splits the weight evenly over the identical columns.
    EXPECT_NEAR(b[1], b[2], 1e-8);
    const Matrix xs = standardize(x.leftCols(2));
    const Vector reduced = xs.colPivHouseholderQr().solve(Vector(y.array() - y.mean()));
    EXPECT_NEAR(b[1] + b[2], reduced[1], 1e-8);
    EXPECT_NEAR(b[0], reduced[0], 1e-8);
}

TEST(Ridge, TinyPenaltyMatchesOls) {
    Rng rng(82);
    const Matrix x = fixtures::random_matrix(rng, 50, 5);
    const Vector y = x * fixtures::random_vector(rng, 5) + 0.1 * fixtures::random_vector(rng, 50);
    auto s = fixed(RegressorKind::ridge);
    s.lambda = 1e-8;
    const auto a = fit_regressor(s, x, y).linear_coefficients()->slopes;
    const auto b = fit_regressor(fixed(RegressorKind::ols), x, y).linear_coefficients()->slopes;
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Ridge, OneDimensionalClosedForm) {
    Matrix x(2, 1);
    x << 1, -1;
    Vector y(2);
    y << 1, -1;
    for (double lambda : {0.0, 0.5, 2.0, 7.0}) {
        auto s = fixed(RegressorKind::ridge);
        s.lambda = lambda;
        EXPECT_NEAR(fit_regressor(s, x, y).linear_coefficients()->slopes[0], 2.0 / (2.0 + lambda), 1e-10);
    }
}

TEST(Ridge, CoefficientNormShrinksWithPenalty) {
    Rng rng(83);
    const Matrix x = fixtures::random_matrix(rng, 30, 8);
    const Vector y = fixtures::random_vector(rng, 30);
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {0.0, 1e-3, 1e-1, 1.0, 10.0, 100.0, 1e4}) {
        auto s = fixed(RegressorKind::ridge);
        s.lambda = lambda;
        const double norm = fit_regressor(s, x, y).standardized_coefficients()->norm();
        EXPECT_LE(norm, prev + 1e-12);
        prev = norm;
    }
}

TEST(Lasso, SatisfiesSubgradientConditions) {
    Rng rng(84);
    const Matrix x = fixtures::random_matrix(rng, 60, 10);
    Vector truth = Vector::Zero(10);
    truth.head(3) << 2.0, -1.0, 0.5;
    const Vector y = x * truth + 0.3 * fixtures::random_vector(rng, 60);
    const Matrix xs = standardize(x);
    for (double lambda : {0.01, 0.1, 0.4}) {
        auto s = fixed(RegressorKind::lasso);
        s.lambda = lambda;
        const Vector b = *fit_regressor(s, x, y).standardized_coefficients();
        const Vector r = (y.array() - y.mean()).matrix() - xs * b;
        int active = 0;
        for (Index j = 0; j < 10; ++j) {
            const double g = xs.col(j).dot(r) / 60.0;
            if (b[j] == 0.0) {
                EXPECT_LE(std::abs(g), lambda + 1e-5);
            } else {
                ++active;
                EXPECT_NEAR(g, lambda * (b[j] > 0 ? 1.0 : -1.0), 1e-5);
            }
        }
        EXPECT_GT(active, 0);
    }
}

TEST(Lasso, PenaltyAtLambdaMaxZeroesEverything) {
    Rng rng(85);
    const Matrix x = fixtures::random_matrix(rng, 40, 6);
    const Vector y = x.col(0) + fixtures::random_vector(rng, 40);
    const Matrix xs = standardize(x);
    const double lmax = (xs.transpose() * (y.array() - y.mean()).matrix()).cwiseAbs().maxCoeff() / 40.0;
    EXPECT_NEAR(lasso_lambda_max(x, y), lmax, 1e-12);
    for (double f : {1.0, 1.5}) {
        auto s = fixed(RegressorKind::lasso);
        s.lambda = f * lmax;
        const auto c = fit_regressor(s, x, y).linear_coefficients();
        EXPECT_EQ(c->slopes.cwiseAbs().maxCoeff(), 0.0);
        EXPECT_NEAR(c->intercept, y.mean(), 1e-12);
    }
}

TEST(KnnRegressor, AveragesFiveNearestTargets) {
    Matrix x(7, 1);
    x << 0.0, 0.1, 0.2, 0.3, 0.4, 9.0, 10.0;
    Vector y(7);
    y << 1, 2, 3, 4, 5, 100, 200;
    EXPECT_DOUBLE_EQ(fit_regressor(fixed(RegressorKind::knn), x, y).predict(Matrix::Constant(1, 1, 0.2))[0], 3.0);
}

TEST(KnnRegressor, MatchesBruteForceScan) {
    Rng rng(86);
    for (Index n : {6, 80, 200}) {
        const Matrix x = fixtures::random_matrix(rng, n, 4);
        const Vector y = fixtures::random_vector(rng, n);
        const auto m = fit_regressor(fixed(RegressorKind::knn), x, y);
        // Probing at training points keeps the standardisation out of the oracle.
        const Vector pred = m.predict(x);
        const Matrix xs = standardize(x);
        for (Index i = 0; i < n; ++i) {
            double s = 0;
            const auto idx = scan_nearest(xs, xs.row(i), 5);
            for (auto j : idx) s += y[j];
            EXPECT_NEAR(pred[i], s / static_cast<double>(idx.size()), 1e-12);
        }
    }
}

TEST(Svr, NoiselessLinearDataStaysInsideTube) {
    Rng rng(87);
    Matrix x(50, 1);
    for (Index i = 0; i < 50; ++i) x(i, 0) = rng.uniform(-2.0, 2.0);
    const Vector y = (3.0 * x.col(0)).array() + 1.0;
    auto s = fixed(RegressorKind::svr);
    s.c = 1000.0;
    s.epsilon = 0.1;
    s.gamma = 0.5;
    const auto m = fit_regressor(s, x, y);
    Matrix probe(40, 1);
    for (Index i = 0; i < 40; ++i) probe(i, 0) = -1.9 + 3.8 * static_cast<double>(i) / 39.0;
    const Vector expect = (3.0 * probe.col(0)).array() + 1.0;
    EXPECT_LE((m.predict(x) - y).cwiseAbs().maxCoeff(), *s.epsilon + 0.05);
    EXPECT_LE((m.predict(probe) - expect).cwiseAbs().maxCoeff(), *s.epsilon + 0.05);
}

TEST(Regressors, GridSearchFillsUnsetHyperparameters) {
    Rng rng(88);
    const Matrix x = fixtures::random_matrix(rng, 40, 3);
    const Vector y = x.col(0) + 0.1 * fixtures::random_vector(rng, 40);
    EXPECT_TRUE(fit_regressor(fixed(RegressorKind::ridge), x, y).spec().lambda);
    EXPECT_TRUE(fit_regressor(fixed(RegressorKind::lasso), x, y).spec().lambda);
    const auto svr = fit_regressor(fixed(RegressorKind::svr), x, y).spec();
    EXPECT_TRUE(svr.c && svr.epsilon && svr.gamma);
}

TEST(Regressors, DeterministicAndShapeChecked) {
    Rng rng(89);
    const Matrix x = fixtures::random_matrix(rng, 30, 3);
    const Vector y = fixtures::random_vector(rng, 30);
    for (auto k : regressor_order) {
        const auto a = fit_regressor(fixed(k), x, y), b = fit_regressor(fixed(k), x, y);
        EXPECT_EQ(a.predict(x), b.predict(x)) << to_string(k);
        EXPECT_EQ(a.predict(Matrix(0, 3)).size(), 0);
        EXPECT_THROW((void)a.predict(Matrix::Zero(2, 4)), DimensionError);
    }
    auto bad = fixed(RegressorKind::svr);
    bad.c = -1.0;
    EXPECT_THROW(fit_regressor(bad, x, y), ConfigError);
}

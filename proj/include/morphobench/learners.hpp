#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "core.hpp"

namespace morphobench {

using Labels = std::vector<int>;

// ---------------------------------------------------------------------------
// Specs

enum class ClassifierKind { parzen, dtree, knn, gnb, rforest };
enum class RegressorKind { ols, ridge, lasso, pinv, knn, svr };

/// Canonical orders used for tie-breaking and table layout.
inline constexpr std::array<ClassifierKind, 5> classifier_order{
    ClassifierKind::parzen, ClassifierKind::dtree, ClassifierKind::knn, ClassifierKind::gnb, ClassifierKind::rforest};
inline constexpr std::array<RegressorKind, 6> regressor_order{RegressorKind::ols,   RegressorKind::ridge,
                                                              RegressorKind::lasso, RegressorKind::pinv,
                                                              RegressorKind::knn,   RegressorKind::svr};

inline const char* to_string(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::parzen: return "parzen";
        case ClassifierKind::dtree: return "dtree";
        case ClassifierKind::knn: return "knn";
        case ClassifierKind::gnb: return "gnb";
        case ClassifierKind::rforest: return "rforest";
    }
    return "?";
}

inline const char* to_string(RegressorKind k) {
    switch (k) {
        case RegressorKind::ols: return "ols";
        case RegressorKind::ridge: return "ridge";
        case RegressorKind::lasso: return "lasso";
        case RegressorKind::pinv: return "pinv";
        case RegressorKind::knn: return "knn";
        case RegressorKind::svr: return "svr";
    }
    return "?";
}

inline std::optional<ClassifierKind> classifier_from_string(const std::string& s) {
    for (auto k : classifier_order)
        if (s == to_string(k)) return k;
    return std::nullopt;
}

inline std::optional<RegressorKind> regressor_from_string(const std::string& s) {
    for (auto k : regressor_order)
        if (s == to_string(k)) return k;
    return std::nullopt;
}

struct ClassifierSpec {
    ClassifierKind kind = ClassifierKind::knn;
    int neighbors = 5;
    int trees = 100;
    std::uint64_t seed = 0;
};

/// Unset hyperparameters are chosen by an inner 5-fold grid search.
struct RegressorSpec {
    RegressorKind kind = RegressorKind::ols;
    int neighbors = 5;
    std::optional<double> lambda;
    std::optional<double> c;
    std::optional<double> epsilon;
    std::optional<double> gamma;
    std::uint64_t seed = 0;
    double lasso_tolerance = 1e-7;
    long lasso_max_sweeps = 100000;
    double svr_tolerance = 1e-3;
};

inline void validate(const ClassifierSpec& s) {
    if (s.neighbors < 1) throw ConfigError("knn neighbour count must be positive");
    if (s.trees < 1) throw ConfigError("forest tree count must be positive");
}

inline void validate(const RegressorSpec& s) {
    if (s.neighbors < 1) throw ConfigError("knn neighbour count must be positive");
    if (s.lambda && !(*s.lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (s.c && !(*s.c > 0.0)) throw ConfigError("svr C must be positive");
    if (s.epsilon && !(*s.epsilon > 0.0)) throw ConfigError("svr epsilon must be positive");
    if (s.gamma && !(*s.gamma > 0.0)) throw ConfigError("svr gamma must be positive");
}

/// Grids searched when a hyperparameter is not fixed.
struct HyperGrid {
    static std::vector<double> lambdas() { return {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2}; }
    static std::vector<double> cs() { return {1e-1, 1.0, 1e1, 1e2, 1e3}; }
    static std::vector<double> epsilons() { return {0.01, 0.1, 0.5}; }
    /// Multiplied by 1/d.
    static std::vector<double> gammas() { return {0.01, 0.1, 1.0}; }
};

// ---------------------------------------------------------------------------
// Standardisation

/// Per-column mean and population standard deviation; constant columns get scale 1.
struct Standardizer {
    Vector mean;
    Vector scale;

    static Standardizer fit(const Matrix& x) {
        Standardizer s;
        const auto n = static_cast<double>(x.rows());
        s.mean = x.colwise().mean().transpose();
        s.scale.resize(x.cols());
        for (Index j = 0; j < x.cols(); ++j) {
            const double var = (x.col(j).array() - s.mean[j]).square().sum() / n;
            const double sd = std::sqrt(var);
            s.scale[j] = sd > 0.0 ? sd : 1.0;
        }
        return s;
    }

    [[nodiscard]] Matrix apply(const Matrix& x) const {
        return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    }
};

namespace detail {

inline void check_training(const Matrix& x, Index targets) {
    if (x.rows() == 0) throw ValidationError("training set is empty");
    if (x.cols() == 0) throw ValidationError("training set has no features");
    if (targets != x.rows()) throw DimensionError("feature rows and targets differ in count");
    require_finite(x, "training features");
}

inline void check_probe(const Matrix& x, Index dim) {
    if (x.rows() > 0 && x.cols() != dim)
        throw DimensionError("model trained on " + std::to_string(dim) + " features, probe has " +
                             std::to_string(x.cols()));
    require_finite(x, "probe features");
}

/// Indices of the k nearest rows of `train` to `q` by squared Euclidean
/// distance; ties go to the lower index.
inline std::vector<Index> nearest(const Matrix& train, const Eigen::RowVectorXd& q, int k) {
    std::vector<std::pair<double, Index>> d(static_cast<std::size_t>(train.rows()));
    for (Index i = 0; i < train.rows(); ++i) d[static_cast<std::size_t>(i)] = {(train.row(i) - q).squaredNorm(), i};
    const auto kk = static_cast<std::size_t>(std::min<Index>(k, train.rows()));
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
    std::vector<Index> out(kk);
    for (std::size_t i = 0; i < kk; ++i) out[i] = d[i].second;
    return out;
}

inline int majority(const Labels& y) {
    const auto ones = std::count(y.begin(), y.end(), 1);
    return 2 * ones > static_cast<long>(y.size()) ? 1 : 0;
}

inline double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CART with Gini impurity

struct TreeNode {
    int feature = -1;  ///< -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int label = 0;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;

    [[nodiscard]] int predict(const Eigen::RowVectorXd& x) const {
        int n = 0;
        while (nodes[static_cast<std::size_t>(n)].feature >= 0) {
            const auto& node = nodes[static_cast<std::size_t>(n)];
            n = x[node.feature] <= node.threshold ? node.left : node.right;
        }
        return nodes[static_cast<std::size_t>(n)].label;
    }
};

namespace detail {

/// Per-fit view of the training matrix shared by every tree: dense ranks per
/// feature (ties share a rank) and the distinct sorted values behind them.
struct RankedData {
    Index n = 0;
    int d = 0;
    std::vector<std::uint32_t> rank;           ///< column-major n x d
    std::vector<std::vector<double>> values;   ///< per feature, indexed by rank

    RankedData(const Matrix& x) : n(x.rows()), d(static_cast<int>(x.cols())) {
        rank.resize(static_cast<std::size_t>(n * d));
        values.resize(static_cast<std::size_t>(d));
        std::vector<Index> order(static_cast<std::size_t>(n));
        for (int f = 0; f < d; ++f) {
            std::iota(order.begin(), order.end(), Index{0});
            std::sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
            auto& vals = values[static_cast<std::size_t>(f)];
            for (Index r : order) {
                if (vals.empty() || x(r, f) != vals.back()) vals.push_back(x(r, f));
                rank[static_cast<std::size_t>(f * n + r)] = static_cast<std::uint32_t>(vals.size() - 1);
            }
        }
    }

    [[nodiscard]] std::uint32_t at(Index row, int f) const { return rank[static_cast<std::size_t>(f * n + row)]; }
};

/// A training row with its bootstrap multiplicity.
struct WeightedRow {
    Index row;
    std::uint32_t weight;
    std::uint32_t label = 0;
};

struct SplitChoice {
    int feature = -1;
    std::uint32_t rank = 0;  ///< rows with rank <= this go left
    double threshold = 0.0;
    double impurity = std::numeric_limits<double>::infinity();
};

/// Reusable buffers for split search. The rank buckets are all zero between calls.
struct SplitScratch {
    std::vector<std::uint64_t> keys;
    std::vector<std::uint32_t> bucket_n, bucket_1;
};

/// Weighted Gini of a candidate split (sum over children of n_c * gini_c).
inline double split_impurity(double n, double total1, double left_n, double left1) {
    const double right_n = n - left_n, right1 = total1 - left1;
    const double l0 = left_n - left1, r0 = right_n - right1;
    return (left_n - (left1 * left1 + l0 * l0) / left_n) + (right_n - (right1 * right1 + r0 * r0) / right_n);
}

/// Best midpoint split of rows [first, last) on feature f, given the node's
/// weighted size and class-1 count. Candidates are visited in ascending rank
/// order either from sorted keys (small nodes) or from rank buckets (large
/// nodes); counts are integers, so both paths give identical sums. Returns
/// false when f is constant on the node.
inline bool best_split_on(const RankedData& data, const WeightedRow* first, const WeightedRow* last, double n,
                          double total1, int f, SplitScratch& scratch, SplitChoice& best) {
    const auto& vals = data.values[static_cast<std::size_t>(f)];
    const auto m = static_cast<std::size_t>(last - first);
    double left_n = 0, left1 = 0;
    auto consider = [&](std::uint32_t r, std::uint32_t next) {
        const double imp = split_impurity(n, total1, left_n, left1);
        if (imp < best.impurity - 1e-12) {
            best.impurity = imp;
            best.feature = f;
            best.rank = r;
            best.threshold = 0.5 * (vals[r] + vals[next]);
        }
    };

    if (4 * m >= vals.size() && m >= 24) {
        auto& bn = scratch.bucket_n;
        auto& b1 = scratch.bucket_1;
        if (bn.size() < vals.size()) {
            bn.resize(vals.size(), 0U);
            b1.resize(vals.size(), 0U);
        }
        std::uint32_t lo = std::numeric_limits<std::uint32_t>::max(), hi = 0;
        for (auto* w = first; w != last; ++w) {
            const auto r = data.at(w->row, f);
            bn[r] += w->weight;
            b1[r] += w->label ? w->weight : 0U;
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        }
        if (lo == hi) {
            bn[lo] = b1[lo] = 0U;
            return false;
        }
        std::uint32_t prev = lo;
        left_n = bn[lo];
        left1 = b1[lo];
        bn[lo] = b1[lo] = 0U;
        for (std::uint32_t r = lo + 1; r <= hi; ++r) {
            if (!bn[r]) continue;
            consider(prev, r);
            left_n += bn[r];
            left1 += b1[r];
            bn[r] = b1[r] = 0U;
            prev = r;
        }
        return true;
    }

    auto& keys = scratch.keys;
    keys.clear();
    for (auto* w = first; w != last; ++w)
        keys.push_back(std::uint64_t{data.at(w->row, f)} << 32 | std::uint64_t{w->weight} << 1 | w->label);
    std::sort(keys.begin(), keys.end());
    if (keys.front() >> 32 == keys.back() >> 32) return false;
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
        const double w = static_cast<double>((keys[i] & 0xffffffffU) >> 1);
        left_n += w;
        left1 += (keys[i] & 1U) ? w : 0.0;
        const auto r = static_cast<std::uint32_t>(keys[i] >> 32), next = static_cast<std::uint32_t>(keys[i + 1] >> 32);
        if (r != next) consider(r, next);
    }
    return true;
}

/// Grows a tree without depth limit (minimum leaf size 1). With `mtry` < d,
/// each node examines features in a random order until `mtry` non-constant
/// ones have been evaluated. Nodes own contiguous ranges of `rows`, which is
/// partitioned in place.
inline DecisionTree grow_tree(const RankedData& data, const Labels& y, std::vector<WeightedRow> rows, int mtry,
                              Rng* rng) {
    DecisionTree tree;
    const int d = data.d;
    for (auto& r : rows) r.label = static_cast<std::uint32_t>(y[static_cast<std::size_t>(r.row)] != 0);
    struct Work {
        std::size_t first, last;
        int node;
    };
    std::vector<Work> stack;
    tree.nodes.push_back({});
    stack.push_back({0, rows.size(), 0});
    std::vector<int> order(static_cast<std::size_t>(d));
    SplitScratch scratch;
    scratch.keys.reserve(rows.size());

    while (!stack.empty()) {
        const Work w = stack.back();
        stack.pop_back();
        WeightedRow* first = rows.data() + w.first;
        WeightedRow* last = rows.data() + w.last;
        long ones = 0, n = 0;
        for (auto* r = first; r != last; ++r) {
            n += r->weight;
            ones += r->label ? r->weight : 0;
        }
        tree.nodes[static_cast<std::size_t>(w.node)].label = 2 * ones > n ? 1 : 0;
        if (ones == 0 || ones == n) continue;

        std::iota(order.begin(), order.end(), 0);
        if (rng) rng->shuffle(order);
        SplitChoice best;
        int evaluated = 0;
        for (int f : order) {
            SplitChoice local;
            if (!best_split_on(data, first, last, static_cast<double>(n), static_cast<double>(ones), f, scratch, local))
                continue;
            // ties between features go to the lower index
            if (local.impurity < best.impurity - 1e-12 ||
                (std::abs(local.impurity - best.impurity) <= 1e-12 && f < best.feature)) {
                best = local;
            }
            if (++evaluated >= mtry) break;
        }
        if (best.feature < 0) continue;

        const auto* mid = std::partition(first, last, [&](const WeightedRow& r) {
            return data.at(r.row, best.feature) <= best.rank;
        });
        const auto split = w.first + static_cast<std::size_t>(mid - first);
        const int li = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes.push_back({});
        auto& node = tree.nodes[static_cast<std::size_t>(w.node)];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = li;
        node.right = li + 1;
        stack.push_back({split, w.last, li + 1});
        stack.push_back({w.first, split, li});
    }
    return tree;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Classifier models

namespace detail {

struct ConstantClassifier {
    int label = 0;
};

/// Gaussian kernel density per class; Silverman bandwidth on standardised data.
struct ParzenState {
    std::array<Matrix, 2> points;
    std::array<double, 2> bandwidth{};
    std::array<double, 2> log_prior{};
    int majority = 0;
};

struct KnnClassifierState {
    Matrix points;
    Labels labels;
    int k = 5;
};

struct GnbState {
    std::array<Vector, 2> mean;
    std::array<Vector, 2> var;
    std::array<double, 2> log_prior{};
    int majority = 0;
};

struct ForestState {
    std::vector<DecisionTree> trees;
};

}  // namespace detail

inline constexpr double gnb_variance_floor = 1e-9;

class ClassifierModel {
public:
    using State = std::variant<detail::ConstantClassifier, detail::ParzenState, DecisionTree,
                               detail::KnnClassifierState, detail::GnbState, detail::ForestState>;

    ClassifierModel(ClassifierSpec spec, Standardizer standardizer, State state)
        : spec_(spec), std_(std::move(standardizer)), state_(std::move(state)) {}

    [[nodiscard]] const ClassifierSpec& spec() const { return spec_; }
    [[nodiscard]] Index input_dim() const { return std_.mean.size(); }
    [[nodiscard]] const State& state() const { return state_; }

    [[nodiscard]] Labels predict(const Matrix& x) const {
        detail::check_probe(x, input_dim());
        Labels out(static_cast<std::size_t>(x.rows()));
        if (x.rows() == 0) return out;
        const Matrix xs = std_.apply(x);
        for (Index i = 0; i < xs.rows(); ++i) out[static_cast<std::size_t>(i)] = predict_one(xs.row(i));
        return out;
    }

private:
    [[nodiscard]] int predict_one(const Eigen::RowVectorXd& q) const {
        return std::visit([&](const auto& s) { return predict_with(s, q); }, state_);
    }

    static int predict_with(const detail::ConstantClassifier& s, const Eigen::RowVectorXd&) { return s.label; }

    static int predict_with(const detail::ParzenState& s, const Eigen::RowVectorXd& q) {
        std::array<double, 2> score{};
        const auto d = static_cast<double>(q.size());
        for (int c = 0; c < 2; ++c) {
            const auto& pts = s.points[static_cast<std::size_t>(c)];
            const double h = s.bandwidth[static_cast<std::size_t>(c)];
            std::vector<double> terms(static_cast<std::size_t>(pts.rows()));
            for (Index i = 0; i < pts.rows(); ++i)
                terms[static_cast<std::size_t>(i)] = -(pts.row(i) - q).squaredNorm() / (2 * h * h);
            score[static_cast<std::size_t>(c)] = s.log_prior[static_cast<std::size_t>(c)] + detail::log_sum_exp(terms) -
                                                 std::log(static_cast<double>(pts.rows())) - d * std::log(h) -
                                                 0.5 * d * std::log(2 * pi);
        }
        if (!std::isfinite(score[0]) && !std::isfinite(score[1])) return s.majority;
        if (score[0] == score[1]) return s.majority;
        return score[1] > score[0] ? 1 : 0;
    }

    static int predict_with(const DecisionTree& t, const Eigen::RowVectorXd& q) { return t.predict(q); }

    static int predict_with(const detail::KnnClassifierState& s, const Eigen::RowVectorXd& q) {
        const auto idx = detail::nearest(s.points, q, s.k);
        int ones = 0;
        for (auto i : idx) ones += s.labels[static_cast<std::size_t>(i)];
        const int zeros = static_cast<int>(idx.size()) - ones;
        if (ones == zeros) return s.labels[static_cast<std::size_t>(idx.front())];
        return ones > zeros ? 1 : 0;
    }

    static int predict_with(const detail::GnbState& s, const Eigen::RowVectorXd& q) {
        std::array<double, 2> score{};
        for (std::size_t c = 0; c < 2; ++c) {
            double ll = s.log_prior[c];
            for (Index j = 0; j < q.size(); ++j) {
                const double v = s.var[c][j];
                const double diff = q[j] - s.mean[c][j];
                ll += -0.5 * std::log(2 * pi * v) - diff * diff / (2 * v);
            }
            score[c] = ll;
        }
        if (!std::isfinite(score[0]) && !std::isfinite(score[1])) return s.majority;
        if (score[0] == score[1]) return s.majority;
        return score[1] > score[0] ? 1 : 0;
    }

    static int predict_with(const detail::ForestState& s, const Eigen::RowVectorXd& q) {
        int ones = 0;
        for (const auto& t : s.trees) ones += t.predict(q);
        return 2 * ones > static_cast<int>(s.trees.size()) ? 1 : 0;
    }

    ClassifierSpec spec_;
    Standardizer std_;
    State state_;
};

/// Fits a binary classifier on standardised features. Deterministic given spec.seed.
inline ClassifierModel fit_classifier(const ClassifierSpec& spec, const Matrix& x, const Labels& y) {
    validate(spec);
    detail::check_training(x, static_cast<Index>(y.size()));
    for (int v : y)
        if (v != 0 && v != 1) throw ValidationError("classifier labels must be 0 or 1");
    auto standardizer = Standardizer::fit(x);
    const Matrix xs = standardizer.apply(x);
    const int maj = detail::majority(y);
    const auto ones = std::count(y.begin(), y.end(), 1);
    if (ones == 0 || ones == static_cast<long>(y.size()))
        return {spec, std::move(standardizer), detail::ConstantClassifier{y.front()}};

    const auto n = static_cast<double>(y.size());
    const auto d = static_cast<double>(x.cols());
    std::array<std::vector<Index>, 2> by_class;
    for (std::size_t i = 0; i < y.size(); ++i) by_class[static_cast<std::size_t>(y[i])].push_back(static_cast<Index>(i));

    switch (spec.kind) {
        case ClassifierKind::parzen: {
            detail::ParzenState s;
            s.majority = maj;
            for (std::size_t c = 0; c < 2; ++c) {
                s.points[c] = select_rows(xs, by_class[c]);
                const auto nc = static_cast<double>(by_class[c].size());
                s.bandwidth[c] = std::pow(4.0 / (d + 2.0), 1.0 / (d + 4.0)) * std::pow(nc, -1.0 / (d + 4.0));
                s.log_prior[c] = std::log(nc / n);
            }
            return {spec, std::move(standardizer), std::move(s)};
        }
        case ClassifierKind::dtree: {
            std::vector<detail::WeightedRow> rows(y.size());
            for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = {static_cast<Index>(i), 1, 0};
            return {spec, std::move(standardizer),
                    detail::grow_tree(detail::RankedData(xs), y, std::move(rows), static_cast<int>(x.cols()), nullptr)};
        }
        case ClassifierKind::knn:
            return {spec, std::move(standardizer), detail::KnnClassifierState{xs, y, spec.neighbors}};
        case ClassifierKind::gnb: {
            detail::GnbState s;
            s.majority = maj;
            for (std::size_t c = 0; c < 2; ++c) {
                const Matrix pts = select_rows(xs, by_class[c]);
                s.mean[c] = pts.colwise().mean().transpose();
                s.var[c] = ((pts.rowwise() - s.mean[c].transpose()).array().square().colwise().sum() /
                            static_cast<double>(pts.rows()))
                               .transpose()
                               .cwiseMax(gnb_variance_floor);
                s.log_prior[c] = std::log(static_cast<double>(pts.rows()) / n);
            }
            return {spec, std::move(standardizer), std::move(s)};
        }
        case ClassifierKind::rforest: {
            detail::ForestState s;
            const int mtry = std::max(1, static_cast<int>(std::sqrt(d)));
            const auto ny = y.size();
            const detail::RankedData data(xs);
            std::vector<std::uint32_t> draws(ny);
            for (int t = 0; t < spec.trees; ++t) {
                Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(t)));
                std::fill(draws.begin(), draws.end(), 0U);
                for (std::size_t i = 0; i < ny; ++i) ++draws[static_cast<std::size_t>(rng.below(ny))];
                // bootstrap duplicates become weights; row order does not affect the splits
                std::vector<detail::WeightedRow> rows;
                for (std::size_t r = 0; r < ny; ++r)
                    if (draws[r]) rows.push_back({static_cast<Index>(r), draws[r], 0});
                s.trees.push_back(detail::grow_tree(data, y, std::move(rows), mtry, &rng));
            }
            return {spec, std::move(standardizer), std::move(s)};
        }
    }
    throw ConfigError("unknown classifier kind");
}

// ---------------------------------------------------------------------------
// Regressors

struct LinearCoefficients {
    double intercept = 0.0;
    Vector slopes;  ///< in original feature units
};

namespace detail {

/// Linear model on standardised features: y = offset + xs * beta.
struct LinearState {
    double offset = 0.0;
    Vector beta;
};

struct KnnRegressorState {
    Matrix points;
    Vector targets;
    int k = 5;
};

struct SvrState {
    Matrix support;
    Vector coef;
    double rho = 0.0;
    double gamma = 1.0;
    double c = 1.0;
    double epsilon = 0.1;
};

inline Vector solve_ols(const Matrix& xs, const Vector& yc) {
    return xs.colPivHouseholderQr().solve(yc);
}

inline Vector solve_ridge(const Matrix& xs, const Vector& yc, double lambda) {
    Matrix a = xs.transpose() * xs;
    a.diagonal().array() += lambda;
    return a.ldlt().solve(xs.transpose() * yc);
}

/// Minimum-norm least squares via the SVD pseudo-inverse with cutoff
/// sigma_max * max(n, d) * machine epsilon.
inline Vector solve_pinv(const Matrix& xs, const Vector& yc) {
    Eigen::JacobiSVD<Matrix> svd(xs, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double tol = (sv.size() ? sv[0] : 0.0) * static_cast<double>(std::max(xs.rows(), xs.cols())) *
                       std::numeric_limits<double>::epsilon();
    Vector inv = Vector::Zero(sv.size());
    for (Index i = 0; i < sv.size(); ++i)
        if (sv[i] > tol) inv[i] = 1.0 / sv[i];
    return svd.matrixV() * inv.asDiagonal() * (svd.matrixU().transpose() * yc);
}

inline double soft_threshold(double z, double g) {
    if (z > g) return z - g;
    if (z < -g) return z + g;
    return 0.0;
}

/// Cyclic coordinate descent for (1/2n)||yc - xs b||^2 + lambda ||b||_1.
/// Stops when the largest coefficient change in a sweep is below `tol`.
inline Vector solve_lasso(const Matrix& xs, const Vector& yc, double lambda, double tol, long max_sweeps) {
    const Index n = xs.rows(), d = xs.cols();
    const auto nn = static_cast<double>(n);
    Vector beta = Vector::Zero(d);
    Vector r = yc;
    Vector colsq(d);
    for (Index j = 0; j < d; ++j) colsq[j] = xs.col(j).squaredNorm() / nn;
    double gap = std::numeric_limits<double>::infinity();
    for (long sweep = 0; sweep < max_sweeps; ++sweep) {
        gap = 0.0;
        for (Index j = 0; j < d; ++j) {
            if (colsq[j] <= 0.0) continue;
            const double rho = xs.col(j).dot(r) / nn + colsq[j] * beta[j];
            const double updated = soft_threshold(rho, lambda) / colsq[j];
            const double delta = updated - beta[j];
            if (delta != 0.0) {
                r.noalias() -= delta * xs.col(j);
                beta[j] = updated;
                gap = std::max(gap, std::abs(delta));
            }
        }
        if (gap < tol) return beta;
    }
    throw ConvergenceError("lasso did not converge within " + std::to_string(max_sweeps) +
                               " sweeps (final max coefficient change " + std::to_string(gap) + ")",
                           gap);
}

inline double rbf(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b, double gamma) {
    return std::exp(-gamma * (a - b).squaredNorm());
}

/// epsilon-SVR dual solved by SMO with second-order working-set selection.
/// Variables are (alpha+, alpha-) stacked into one vector of length 2n.
inline SvrState solve_svr(const Matrix& xs, const Vector& y, double c, double eps, double gamma, double tol) {
    const Index n = xs.rows();
    const Index l = 2 * n;
    Matrix k(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i; j < n; ++j) k(i, j) = k(j, i) = rbf(xs.row(i), xs.row(j), gamma);

    std::vector<int> sign(static_cast<std::size_t>(l));
    Vector alpha = Vector::Zero(l), grad(l);
    for (Index t = 0; t < n; ++t) {
        sign[static_cast<std::size_t>(t)] = 1;
        sign[static_cast<std::size_t>(t + n)] = -1;
        grad[t] = eps - y[t];
        grad[t + n] = eps + y[t];
    }
    auto q = [&](Index a, Index b) {
        return sign[static_cast<std::size_t>(a)] * sign[static_cast<std::size_t>(b)] * k(a % n, b % n);
    };
    auto upper = [&](Index t) { return alpha[t] >= c; };
    auto lower = [&](Index t) { return alpha[t] <= 0.0; };
    constexpr double tau = 1e-12;

    const long max_iter = std::max<long>(10000000L, 100L * static_cast<long>(l));
    for (long iter = 0; iter < max_iter; ++iter) {
        double gmax = -std::numeric_limits<double>::infinity(), gmax2 = gmax;
        Index i = -1, j = -1;
        for (Index t = 0; t < l; ++t) {
            if (sign[static_cast<std::size_t>(t)] == 1) {
                if (!upper(t) && -grad[t] >= gmax) { gmax = -grad[t]; i = t; }
            } else {
                if (!lower(t) && grad[t] >= gmax) { gmax = grad[t]; i = t; }
            }
        }
        double best_obj = std::numeric_limits<double>::infinity();
        for (Index t = 0; t < l; ++t) {
            double diff = 0.0, quad = 0.0;
            if (sign[static_cast<std::size_t>(t)] == 1) {
                if (lower(t)) continue;
                diff = gmax + grad[t];
                gmax2 = std::max(gmax2, grad[t]);
                if (diff <= 0 || i < 0) continue;
                quad = k(i % n, i % n) + k(t % n, t % n) - 2.0 * sign[static_cast<std::size_t>(i)] * q(i, t);
            } else {
                if (upper(t)) continue;
                diff = gmax - grad[t];
                gmax2 = std::max(gmax2, -grad[t]);
                if (diff <= 0 || i < 0) continue;
                quad = k(i % n, i % n) + k(t % n, t % n) + 2.0 * sign[static_cast<std::size_t>(i)] * q(i, t);
            }
            const double obj = -(diff * diff) / (quad > 0 ? quad : tau);
            if (obj <= best_obj) { best_obj = obj; j = t; }
        }
        if (gmax + gmax2 < tol || j < 0 || i < 0) break;

        const double ai_old = alpha[i], aj_old = alpha[j];
        const double qij = q(i, j);
        if (sign[static_cast<std::size_t>(i)] != sign[static_cast<std::size_t>(j)]) {
            double quad = k(i % n, i % n) + k(j % n, j % n) + 2 * qij;
            if (quad <= 0) quad = tau;
            const double delta = (-grad[i] - grad[j]) / quad;
            const double diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0) {
                if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = diff; }
            } else {
                if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = -diff; }
            }
            if (diff > 0) {
                if (alpha[i] > c) { alpha[i] = c; alpha[j] = c - diff; }
            } else {
                if (alpha[j] > c) { alpha[j] = c; alpha[i] = c + diff; }
            }
        } else {
            double quad = k(i % n, i % n) + k(j % n, j % n) - 2 * qij;
            if (quad <= 0) quad = tau;
            const double delta = (grad[i] - grad[j]) / quad;
            const double sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if (sum > c) {
                if (alpha[i] > c) { alpha[i] = c; alpha[j] = sum - c; }
            } else {
                if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = sum; }
            }
            if (sum > c) {
                if (alpha[j] > c) { alpha[j] = c; alpha[i] = sum - c; }
            } else {
                if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = sum; }
            }
        }
        const double dai = alpha[i] - ai_old, daj = alpha[j] - aj_old;
        for (Index t = 0; t < l; ++t) grad[t] += q(i, t) * dai + q(j, t) * daj;
    }

    // Bias from free variables, or the midpoint of the feasible interval.
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, free_sum = 0.0;
    int free_count = 0;
    for (Index t = 0; t < l; ++t) {
        const double yg = sign[static_cast<std::size_t>(t)] * grad[t];
        if (upper(t)) {
            if (sign[static_cast<std::size_t>(t)] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
        } else if (lower(t)) {
            if (sign[static_cast<std::size_t>(t)] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
        } else {
            ++free_count;
            free_sum += yg;
        }
    }
    SvrState s;
    s.rho = free_count > 0 ? free_sum / free_count : (ub + lb) / 2;
    s.support = xs;
    s.coef = alpha.head(n) - alpha.tail(n);
    s.gamma = gamma;
    s.c = c;
    s.epsilon = eps;
    return s;
}

}  // namespace detail

class RegressorModel {
public:
    using State = std::variant<detail::LinearState, detail::KnnRegressorState, detail::SvrState>;

    RegressorModel(RegressorSpec spec, Standardizer standardizer, State state)
        : spec_(std::move(spec)), std_(std::move(standardizer)), state_(std::move(state)) {}

    /// The regressor spec with any grid-searched hyperparameters filled in.
    [[nodiscard]] const RegressorSpec& spec() const { return spec_; }
    [[nodiscard]] Index input_dim() const { return std_.mean.size(); }
    [[nodiscard]] const State& state() const { return state_; }

    [[nodiscard]] Vector predict(const Matrix& x) const {
        detail::check_probe(x, input_dim());
        if (x.rows() == 0) return Vector(0);
        const Matrix xs = std_.apply(x);
        Vector out(xs.rows());
        for (Index i = 0; i < xs.rows(); ++i) out[i] = predict_one(xs.row(i));
        return out;
    }

    /// Intercept and slopes in original feature units, for the linear kinds.
    [[nodiscard]] std::optional<LinearCoefficients> linear_coefficients() const {
        const auto* lin = std::get_if<detail::LinearState>(&state_);
        if (!lin) return std::nullopt;
        LinearCoefficients c;
        c.slopes = lin->beta.cwiseQuotient(std_.scale);
        c.intercept = lin->offset - c.slopes.dot(std_.mean);
        return c;
    }

    /// Coefficients on the standardised features.
    [[nodiscard]] std::optional<Vector> standardized_coefficients() const {
        const auto* lin = std::get_if<detail::LinearState>(&state_);
        if (!lin) return std::nullopt;
        return lin->beta;
    }

private:
    [[nodiscard]] double predict_one(const Eigen::RowVectorXd& q) const {
        if (const auto* lin = std::get_if<detail::LinearState>(&state_)) return lin->offset + q.dot(lin->beta);
        if (const auto* knn = std::get_if<detail::KnnRegressorState>(&state_)) {
            const auto idx = detail::nearest(knn->points, q, knn->k);
            double s = 0.0;
            for (auto i : idx) s += knn->targets[i];
            return s / static_cast<double>(idx.size());
        }
        const auto& svr = std::get<detail::SvrState>(state_);
        double f = -svr.rho;
        for (Index i = 0; i < svr.support.rows(); ++i)
            if (svr.coef[i] != 0.0) f += svr.coef[i] * detail::rbf(svr.support.row(i), q, svr.gamma);
        return f;
    }

    RegressorSpec spec_;
    Standardizer std_;
    State state_;
};

RegressorModel fit_regressor(const RegressorSpec& spec, const Matrix& x, const Vector& y);

namespace detail {

/// Mean squared error of `spec` under k-fold CV on (x, y); folds assigned by
/// a seeded permutation.
inline double inner_cv_mse(const RegressorSpec& spec, const Matrix& x, const Vector& y, int folds) {
    const auto n = static_cast<std::size_t>(x.rows());
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    Rng rng(derive_seed(spec.seed, 0x6772696473ULL));
    rng.shuffle(perm);
    double sse = 0.0;
    for (int f = 0; f < folds; ++f) {
        std::vector<Index> tr, te;
        for (std::size_t i = 0; i < n; ++i) (static_cast<int>(i % static_cast<std::size_t>(folds)) == f ? te : tr).push_back(perm[i]);
        if (tr.empty() || te.empty()) continue;
        Vector ytr(static_cast<Index>(tr.size())), yte(static_cast<Index>(te.size()));
        for (std::size_t i = 0; i < tr.size(); ++i) ytr[static_cast<Index>(i)] = y[tr[i]];
        for (std::size_t i = 0; i < te.size(); ++i) yte[static_cast<Index>(i)] = y[te[i]];
        const auto model = fit_regressor(spec, select_rows(x, tr), ytr);
        sse += (model.predict(select_rows(x, te)) - yte).squaredNorm();
    }
    return sse / static_cast<double>(n);
}

/// Fills unset hyperparameters by inner 5-fold grid search (first best wins).
inline RegressorSpec tune(const RegressorSpec& spec, const Matrix& x, const Vector& y) {
    RegressorSpec out = spec;
    const int folds = static_cast<int>(std::min<Index>(5, x.rows()));
    if (folds < 2) {
        if (!out.lambda) out.lambda = 1.0;
        if (!out.c) out.c = 1.0;
        if (!out.epsilon) out.epsilon = 0.1;
        if (!out.gamma) out.gamma = 1.0 / static_cast<double>(x.cols());
        return out;
    }
    auto pick = [&](const std::vector<RegressorSpec>& cands) {
        double best = std::numeric_limits<double>::infinity();
        RegressorSpec chosen = cands.front();
        for (const auto& c : cands) {
            const double mse = inner_cv_mse(c, x, y, folds);
            if (mse < best) {
                best = mse;
                chosen = c;
            }
        }
        return chosen;
    };
    if (spec.kind == RegressorKind::ridge || spec.kind == RegressorKind::lasso) {
        if (out.lambda) return out;
        std::vector<RegressorSpec> cands;
        for (double l : HyperGrid::lambdas()) {
            RegressorSpec c = out;
            c.lambda = l;
            cands.push_back(c);
        }
        return pick(cands);
    }
    if (spec.kind == RegressorKind::svr) {
        if (out.c && out.epsilon && out.gamma) return out;
        const double d = static_cast<double>(x.cols());
        std::vector<RegressorSpec> cands;
        for (double cv : out.c ? std::vector<double>{*out.c} : HyperGrid::cs())
            for (double ev : out.epsilon ? std::vector<double>{*out.epsilon} : HyperGrid::epsilons())
                for (double gv : out.gamma ? std::vector<double>{*out.gamma} : HyperGrid::gammas()) {
                    RegressorSpec c = out;
                    c.c = cv;
                    c.epsilon = ev;
                    c.gamma = out.gamma ? gv : gv / d;
                    cands.push_back(c);
                }
        return pick(cands);
    }
    return out;
}

}  // namespace detail

/// Fits a regressor on standardised features. Linear kinds use an
/// unpenalised intercept (the target mean, since standardised columns are centred).
inline RegressorModel fit_regressor(const RegressorSpec& spec_in, const Matrix& x, const Vector& y) {
    validate(spec_in);
    detail::check_training(x, y.size());
    require_finite(y, "regression targets");
    const RegressorSpec spec = detail::tune(spec_in, x, y);
    auto standardizer = Standardizer::fit(x);
    const Matrix xs = standardizer.apply(x);
    const double ymean = y.mean();
    const Vector yc = y.array() - ymean;

    switch (spec.kind) {
        case RegressorKind::ols:
            return {spec, std::move(standardizer), detail::LinearState{ymean, detail::solve_ols(xs, yc)}};
        case RegressorKind::ridge:
            return {spec, std::move(standardizer), detail::LinearState{ymean, detail::solve_ridge(xs, yc, *spec.lambda)}};
        case RegressorKind::lasso:
            return {spec, std::move(standardizer),
                    detail::LinearState{ymean, detail::solve_lasso(xs, yc, *spec.lambda, spec.lasso_tolerance,
                                                                   spec.lasso_max_sweeps)}};
        case RegressorKind::pinv:
            return {spec, std::move(standardizer), detail::LinearState{ymean, detail::solve_pinv(xs, yc)}};
        case RegressorKind::knn:
            return {spec, std::move(standardizer), detail::KnnRegressorState{xs, y, spec.neighbors}};
        case RegressorKind::svr:
            return {spec, std::move(standardizer),
                    detail::solve_svr(xs, y, *spec.c, *spec.epsilon, *spec.gamma, spec.svr_tolerance)};
    }
    throw ConfigError("unknown regressor kind");
}

/// max_j |xs_j' (y - mean y)| / n on standardised features: the smallest
/// lasso penalty that zeroes every coefficient.
inline double lasso_lambda_max(const Matrix& x, const Vector& y) {
    const Matrix xs = Standardizer::fit(x).apply(x);
    const Vector yc = y.array() - y.mean();
    return (xs.transpose() * yc).cwiseAbs().maxCoeff() / static_cast<double>(x.rows());
}

}  // namespace morphobench

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "learners.hpp"
#include "parallel.hpp"

namespace morphobench {

struct CVConfig {
    int folds = 10;
    int repeats = 30;
    std::uint64_t master_seed = 0;
    bool stratified = true;
    /// Accuracy per repeat over all held-out predictions instead of the fold mean.
    bool pooled_accuracy = false;
    unsigned threads = 0;
};

inline void validate(const CVConfig& cfg) {
    if (cfg.folds < 2) throw ConfigError("folds must be at least 2");
    if (cfg.repeats < 1) throw ConfigError("repeats must be at least 1");
}

/// fold_of[i] is the held-out fold of sample i.
struct FoldAssignment {
    int folds = 0;
    std::vector<int> fold_of;

    [[nodiscard]] std::vector<Index> test_indices(int f) const {
        std::vector<Index> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] == f) out.push_back(static_cast<Index>(i));
        return out;
    }
    [[nodiscard]] std::vector<Index> train_indices(int f) const {
        std::vector<Index> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] != f) out.push_back(static_cast<Index>(i));
        return out;
    }
    [[nodiscard]] std::vector<std::size_t> sizes() const {
        std::vector<std::size_t> s(static_cast<std::size_t>(folds), 0);
        for (int f : fold_of) ++s[static_cast<std::size_t>(f)];
        return s;
    }
};

inline std::uint64_t repeat_seed(std::uint64_t master_seed, int repeat_index) {
    return derive_seed(master_seed, static_cast<std::uint64_t>(repeat_index));
}

/// Random partition into cfg.folds subsets whose sizes differ by at most one.
/// With labels and cfg.stratified, each class is dealt round-robin in turn
/// (the fold counter carries over between classes), so per-class counts also
/// differ by at most one across folds.
inline FoldAssignment make_folds(std::size_t n, const CVConfig& cfg, int repeat_index, const Labels* labels = nullptr) {
    validate(cfg);
    if (n < static_cast<std::size_t>(cfg.folds))
        throw ValidationError("need at least " + std::to_string(cfg.folds) + " samples for " +
                              std::to_string(cfg.folds) + "-fold CV, got " + std::to_string(n));
    if (labels && labels->size() != n) throw DimensionError("label count differs from sample count");
    Rng rng(repeat_seed(cfg.master_seed, repeat_index));
    FoldAssignment fa;
    fa.folds = cfg.folds;
    fa.fold_of.assign(n, 0);
    std::size_t counter = 0;
    auto deal = [&](std::vector<Index>& idx) {
        rng.shuffle(idx);
        for (auto i : idx) fa.fold_of[static_cast<std::size_t>(i)] = static_cast<int>(counter++ % static_cast<std::size_t>(cfg.folds));
    };
    if (labels && cfg.stratified) {
        for (int c = 0; c < 2; ++c) {
            std::vector<Index> idx;
            for (std::size_t i = 0; i < n; ++i)
                if ((*labels)[i] == c) idx.push_back(static_cast<Index>(i));
            deal(idx);
        }
    } else {
        std::vector<Index> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<Index>(i);
        deal(idx);
    }
    return fa;
}

// ---------------------------------------------------------------------------
// Metrics

/// 1.96 * std / sqrt(repeats).
inline double confidence_interval(double std_dev, int repeats) {
    if (repeats < 1) throw ValidationError("repeats must be positive");
    if (!(std_dev >= 0.0)) throw ValidationError("standard deviation must be non-negative");
    return 1.96 * std_dev / std::sqrt(static_cast<double>(repeats));
}

inline double rmse(const Vector& measured, const Vector& predicted) {
    if (measured.size() != predicted.size()) throw DimensionError("rmse series lengths differ");
    if (measured.size() == 0) throw ValidationError("rmse of empty series");
    return std::sqrt((measured - predicted).squaredNorm() / static_cast<double>(measured.size()));
}

/// Pearson correlation; nullopt when either series is constant.
inline std::optional<double> pearson(const Vector& measured, const Vector& predicted) {
    if (measured.size() != predicted.size()) throw DimensionError("pearson series lengths differ");
    if (measured.size() < 2) throw ValidationError("pearson needs at least 2 pairs");
    auto constant = [](const Vector& v) { return (v.array() == v[0]).all(); };
    if (constant(measured) || constant(predicted)) return std::nullopt;
    const Vector dx = measured.array() - measured.mean();
    const Vector dy = predicted.array() - predicted.mean();
    const double den = std::sqrt(dx.squaredNorm() * dy.squaredNorm());
    if (!(den > 0.0)) return std::nullopt;
    return std::clamp(dx.dot(dy) / den, -1.0, 1.0);
}

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;  ///< sample standard deviation over repeats
    double ci95 = 0.0;
    std::vector<double> per_repeat;
};

inline MetricSummary summarize(std::vector<double> values) {
    if (values.empty()) throw ValidationError("cannot summarise an empty series");
    MetricSummary s;
    const auto r = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / r;
    // corrected two-pass: cancels the rounding in the mean, so equal values give exactly 0
    double ss = 0.0, dev = 0.0;
    for (double v : values) {
        ss += (v - s.mean) * (v - s.mean);
        dev += v - s.mean;
    }
    ss = std::max(0.0, ss - dev * dev / r);
    s.std = values.size() > 1 ? std::sqrt(ss / (r - 1.0)) : 0.0;
    s.ci95 = confidence_interval(s.std, static_cast<int>(values.size()));
    s.per_repeat = std::move(values);
    return s;
}

struct ResidualRecord {
    std::size_t sample = 0;
    double measured = 0.0;
    double predicted = 0.0;  ///< mean held-out prediction over repeats
    double residual = 0.0;   ///< measured - predicted
};

struct RegressionSummary {
    MetricSummary rmse;                            ///< over per-repeat rmse values
    std::optional<double> pearson_r;               ///< pooled over all repeats
    std::vector<std::optional<double>> pearson_per_repeat;
    std::vector<ResidualRecord> residuals;
};

// ---------------------------------------------------------------------------
// Cross-validation drivers

/// Fits on `train` and predicts `test` for each of several models at once
/// (e.g. methods x dimensions sharing one fold-wise feature computation).
/// The seed is unique per (repeat, fold).
using MultiClassifyFn =
    std::function<std::vector<Labels>(const std::vector<Index>& train, const std::vector<Index>& test, std::uint64_t seed)>;
using MultiRegressFn =
    std::function<std::vector<Vector>(const std::vector<Index>& train, const std::vector<Index>& test, std::uint64_t seed)>;
using ClassifyFn = std::function<Labels(const std::vector<Index>& train, const std::vector<Index>& test, std::uint64_t seed)>;
using RegressFn = std::function<Vector(const std::vector<Index>& train, const std::vector<Index>& test, std::uint64_t seed)>;

namespace detail {

inline std::uint64_t fold_seed(std::uint64_t master, int repeat, int fold) {
    return derive_seed(repeat_seed(master, repeat), 0x100000000ULL + static_cast<std::uint64_t>(fold));
}

[[noreturn]] inline void rethrow_with_context(const Error& e, int repeat, int fold) {
    throw Error(e.category(), "repeat " + std::to_string(repeat) + ", fold " + std::to_string(fold) + ": " + e.what());
}

}  // namespace detail

/// One summary per model, in model order. Repeats run concurrently and are
/// reduced in repeat order.
inline std::vector<MetricSummary> cross_validate_classify_multi(const MultiClassifyFn& fit_predict, std::size_t models,
                                                                const Labels& y, const CVConfig& cfg) {
    validate(cfg);
    const auto ones = std::count(y.begin(), y.end(), 1);
    if (ones == 0 || ones == static_cast<long>(y.size()))
        throw ValidationError("cross-validation needs both classes present");
    const auto reps = static_cast<std::size_t>(cfg.repeats);
    std::vector<std::vector<double>> acc(models, std::vector<double>(reps));
    parallel_for(reps, cfg.threads, [&](std::size_t r) {
        const int rep = static_cast<int>(r);
        const auto folds = make_folds(y.size(), cfg, rep, &y);
        std::vector<double> fold_sum(models, 0.0);
        std::vector<std::size_t> correct(models, 0);
        for (int f = 0; f < cfg.folds; ++f) {
            const auto train = folds.train_indices(f);
            const auto test = folds.test_indices(f);
            std::vector<Labels> pred;
            try {
                pred = fit_predict(train, test, detail::fold_seed(cfg.master_seed, rep, f));
            } catch (const Error& e) {
                detail::rethrow_with_context(e, rep, f);
            }
            if (pred.size() != models) throw DimensionError("prediction set count differs from model count");
            for (std::size_t m = 0; m < models; ++m) {
                if (pred[m].size() != test.size()) throw DimensionError("prediction count differs from test fold size");
                std::size_t hit = 0;
                for (std::size_t i = 0; i < test.size(); ++i) hit += pred[m][i] == y[static_cast<std::size_t>(test[i])];
                correct[m] += hit;
                fold_sum[m] += static_cast<double>(hit) / static_cast<double>(test.size());
            }
        }
        for (std::size_t m = 0; m < models; ++m)
            acc[m][r] = cfg.pooled_accuracy ? static_cast<double>(correct[m]) / static_cast<double>(y.size())
                                            : fold_sum[m] / cfg.folds;
    });
    std::vector<MetricSummary> out;
    for (auto& a : acc) out.push_back(summarize(std::move(a)));
    return out;
}

inline MetricSummary cross_validate_classify(const ClassifyFn& fit_predict, const Labels& y, const CVConfig& cfg) {
    return cross_validate_classify_multi(
               [&](const std::vector<Index>& train, const std::vector<Index>& test, std::uint64_t seed) {
                   return std::vector<Labels>{fit_predict(train, test, seed)};
               },
               1, y, cfg)
        .front();
}

inline MetricSummary cross_validate_classify(const ClassifierSpec& spec, const Matrix& x, const Labels& y,
                                             const CVConfig& cfg) {
    if (x.rows() != static_cast<Index>(y.size())) throw DimensionError("feature rows and labels differ in count");
    return cross_validate_classify(
        [&](const std::vector<Index>& train, const std::vector<Index>& test, std::uint64_t seed) {
            ClassifierSpec s = spec;
            s.seed = derive_seed(spec.seed, seed);
            return fit_classifier(s, select_rows(x, train), select(y, train)).predict(select_rows(x, test));
        },
        y, cfg);
}

namespace detail {

inline RegressionSummary summarize_regression(const Vector& y, const std::vector<Vector>& pooled) {
    const auto n = static_cast<std::size_t>(y.size());
    const auto reps = pooled.size();
    RegressionSummary s;
    std::vector<double> errs;
    Vector all_measured(static_cast<Index>(n * reps)), all_pred(static_cast<Index>(n * reps));
    Vector mean_pred = Vector::Zero(static_cast<Index>(n));
    for (std::size_t r = 0; r < reps; ++r) {
        errs.push_back(rmse(y, pooled[r]));
        s.pearson_per_repeat.push_back(pearson(y, pooled[r]));
        all_measured.segment(static_cast<Index>(r * n), static_cast<Index>(n)) = y;
        all_pred.segment(static_cast<Index>(r * n), static_cast<Index>(n)) = pooled[r];
        mean_pred += pooled[r];
    }
    mean_pred /= static_cast<double>(reps);
    s.rmse = summarize(std::move(errs));
    s.pearson_r = pearson(all_measured, all_pred);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Index>(i);
        s.residuals.push_back({i, y[ii], mean_pred[ii], y[ii] - mean_pred[ii]});
    }
    return s;
}

}  // namespace detail

/// Held-out predictions are pooled over folds within each repeat; rmse is
/// averaged over repeats and pearson taken over all pooled pairs.
inline std::vector<RegressionSummary> cross_validate_regress_multi(const MultiRegressFn& fit_predict, std::size_t models,
                                                                   const Vector& y, const CVConfig& cfg) {
    validate(cfg);
    const auto n = static_cast<std::size_t>(y.size());
    const auto reps = static_cast<std::size_t>(cfg.repeats);
    std::vector<std::vector<Vector>> pooled(models, std::vector<Vector>(reps));
    parallel_for(reps, cfg.threads, [&](std::size_t r) {
        const int rep = static_cast<int>(r);
        const auto folds = make_folds(n, cfg, rep, nullptr);
        std::vector<Vector> pred(models, Vector(static_cast<Index>(n)));
        for (int f = 0; f < cfg.folds; ++f) {
            const auto train = folds.train_indices(f);
            const auto test = folds.test_indices(f);
            std::vector<Vector> p;
            try {
                p = fit_predict(train, test, detail::fold_seed(cfg.master_seed, rep, f));
            } catch (const Error& e) {
                detail::rethrow_with_context(e, rep, f);
            }
            if (p.size() != models) throw DimensionError("prediction set count differs from model count");
            for (std::size_t m = 0; m < models; ++m) {
                if (p[m].size() != static_cast<Index>(test.size()))
                    throw DimensionError("prediction count differs from test fold size");
                for (std::size_t i = 0; i < test.size(); ++i) pred[m][test[i]] = p[m][static_cast<Index>(i)];
            }
        }
        for (std::size_t m = 0; m < models; ++m) pooled[m][r] = std::move(pred[m]);
    });
    std::vector<RegressionSummary> out;
    for (const auto& p : pooled) out.push_back(detail::summarize_regression(y, p));
    return out;
}

inline RegressionSummary cross_validate_regress(const RegressFn& fit_predict, const Vector& y, const CVConfig& cfg) {
    return cross_validate_regress_multi(
               [&](const std::vector<Index>& train, const std::vector<Index>& test, std::uint64_t seed) {
                   return std::vector<Vector>{fit_predict(train, test, seed)};
               },
               1, y, cfg)
        .front();
}

inline RegressionSummary cross_validate_regress(const RegressorSpec& spec, const Matrix& x, const Vector& y,
                                                const CVConfig& cfg) {
    if (x.rows() != y.size()) throw DimensionError("feature rows and targets differ in count");
    return cross_validate_regress(
        [&](const std::vector<Index>& train, const std::vector<Index>& test, std::uint64_t seed) {
            RegressorSpec s = spec;
            s.seed = derive_seed(spec.seed, seed);
            Vector ytr(static_cast<Index>(train.size()));
            for (std::size_t i = 0; i < train.size(); ++i) ytr[static_cast<Index>(i)] = y[train[i]];
            return fit_regressor(s, select_rows(x, train), ytr).predict(select_rows(x, test));
        },
        y, cfg);
}

// ---------------------------------------------------------------------------
// Method selection by per-trait wins

struct MethodSelection {
    std::vector<std::string> methods;
    std::vector<std::size_t> winner_of_trait;  ///< index into methods
    std::vector<int> wins;                     ///< per method
    std::size_t selected = 0;

    [[nodiscard]] const std::string& selected_name() const { return methods[selected]; }
};

/// scores(m, t) is method m's score on trait t, rows in canonical method
/// order. Higher is better unless `lower_is_better`. Ties go to the earlier method.
inline MethodSelection select_best_method(const Matrix& scores, std::vector<std::string> methods,
                                          bool lower_is_better = false) {
    if (scores.rows() == 0 || scores.cols() == 0) throw ValidationError("method score table is empty");
    if (static_cast<std::size_t>(scores.rows()) != methods.size())
        throw DimensionError("method names do not match score table rows");
    MethodSelection s;
    s.methods = std::move(methods);
    s.wins.assign(s.methods.size(), 0);
    for (Index t = 0; t < scores.cols(); ++t) {
        Index best = 0;
        for (Index m = 1; m < scores.rows(); ++m) {
            const bool better = lower_is_better ? scores(m, t) < scores(best, t) : scores(m, t) > scores(best, t);
            if (better) best = m;
        }
        s.winner_of_trait.push_back(static_cast<std::size_t>(best));
        ++s.wins[static_cast<std::size_t>(best)];
    }
    for (std::size_t m = 1; m < s.wins.size(); ++m)
        if (s.wins[m] > s.wins[s.selected]) s.selected = m;
    return s;
}

}  // namespace morphobench

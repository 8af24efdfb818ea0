#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "dataset.hpp"
#include "descriptors.hpp"
#include "eval.hpp"
#include "geometry.hpp"
#include "imaging.hpp"
#include "learners.hpp"
#include "parallel.hpp"
#include "reduce.hpp"

namespace morphobench {

inline constexpr const char* tool_version = "morphobench 0.1.0";

enum class FeatureKind { structural, appearance, fingerprint, fused };
enum class Preprocess { cropped, segmented };
enum class Task { classify, regress };

inline const char* to_string(FeatureKind f) {
    switch (f) {
        case FeatureKind::structural: return "structural";
        case FeatureKind::appearance: return "appearance";
        case FeatureKind::fingerprint: return "fingerprint";
        case FeatureKind::fused: return "fused";
    }
    return "?";
}
inline const char* to_string(Preprocess p) { return p == Preprocess::cropped ? "cropped" : "segmented"; }
inline const char* to_string(Task t) { return t == Task::classify ? "classify" : "regress"; }
inline const char* to_string(GenderFilter g) {
    switch (g) {
        case GenderFilter::all: return "all";
        case GenderFilter::male: return "male";
        case GenderFilter::female: return "female";
    }
    return "?";
}

inline FeatureKind feature_from_string(const std::string& s) {
    for (auto f : {FeatureKind::structural, FeatureKind::appearance, FeatureKind::fingerprint, FeatureKind::fused})
        if (s == to_string(f)) return f;
    throw ConfigError("unknown feature '" + s + "'");
}
inline Preprocess preprocess_from_string(const std::string& s) {
    if (s == "cropped") return Preprocess::cropped;
    if (s == "segmented") return Preprocess::segmented;
    throw ConfigError("unknown preprocessing '" + s + "'");
}
inline Task task_from_string(const std::string& s) {
    if (s == "classify") return Task::classify;
    if (s == "regress") return Task::regress;
    throw ConfigError("unknown task '" + s + "'");
}
inline GenderFilter gender_filter_from_string(const std::string& s) {
    if (s == "all") return GenderFilter::all;
    if (s == "male") return GenderFilter::male;
    if (s == "female") return GenderFilter::female;
    throw ConfigError("unknown gender filter '" + s + "'");
}

/// Candidate dimensions used when the configuration gives none.
inline std::vector<int> default_dims(FeatureKind f, Task t) {
    if (t == Task::regress) return {2, 5, 8, 10, 15, 20, 30, 40, 50, 60, 70};
    if (f == FeatureKind::appearance || f == FeatureKind::fused) return {5, 10, 15, 20, 25, 30, 40, 50, 60, 70, 80};
    return {5, 10, 15, 20, 25, 30, 35, 40, 50};
}

struct AppearanceParams {
    int crop_size = 200;
    int pyramid_levels = 4;
    Index block_dims = appearance_block_dim;
    DescriptorParams descriptors;
};

struct ExperimentConfig {
    std::filesystem::path manifest;
    FeatureKind feature = FeatureKind::structural;
    Preprocess preprocess = Preprocess::cropped;
    Task task = Task::classify;
    GenderFilter gender = GenderFilter::all;
    std::vector<DescriptorKind> descriptors{all_descriptor_kinds.begin(), all_descriptor_kinds.end()};
    std::vector<int> dims;            ///< empty: default_dims(feature, task)
    std::vector<std::string> methods; ///< empty: every method for the task
    CVConfig cv;
    bool per_trait_dims = false;
    /// Fit every PCA on all samples instead of inside each training fold (leaks test data).
    bool pca_global = false;
    int knn_k = 5;
    int forest_trees = 100;
    std::optional<double> ridge_lambda;
    std::optional<double> lasso_lambda;
    std::optional<double> svr_c;
    std::optional<double> svr_epsilon;
    std::optional<double> svr_gamma;
    AppearanceParams appearance;
    Index fusion_dims = 400;

    [[nodiscard]] std::vector<int> effective_dims() const { return dims.empty() ? default_dims(feature, task) : dims; }

    [[nodiscard]] std::vector<std::string> effective_methods() const {
        if (!methods.empty()) return methods;
        std::vector<std::string> out;
        if (task == Task::classify)
            for (auto k : classifier_order) out.emplace_back(to_string(k));
        else
            for (auto k : regressor_order) out.emplace_back(to_string(k));
        return out;
    }
};

/// Method names in canonical order; unknown names or names of the wrong task throw.
inline std::vector<std::string> canonical_methods(const ExperimentConfig& cfg) {
    const auto listed = cfg.effective_methods();
    std::vector<std::string> out;
    auto take = [&](const std::string& name) {
        if (std::find(listed.begin(), listed.end(), name) != listed.end()) out.push_back(name);
    };
    for (const auto& m : listed) {
        const bool ok = cfg.task == Task::classify ? classifier_from_string(m).has_value()
                                                   : regressor_from_string(m).has_value();
        if (!ok)
            throw ConfigError("method '" + m + "' is not a " +
                              (cfg.task == Task::classify ? std::string("classifier") : std::string("regressor")));
    }
    if (cfg.task == Task::classify)
        for (auto k : classifier_order) take(to_string(k));
    else
        for (auto k : regressor_order) take(to_string(k));
    if (out.size() != listed.size()) throw ConfigError("method list contains duplicates");
    return out;
}

inline void validate(const ExperimentConfig& cfg) {
    validate(cfg.cv);
    const auto dims = cfg.effective_dims();
    if (dims.empty()) throw ConfigError("no candidate dimensions");
    for (int d : dims)
        if (d < 1) throw ConfigError("candidate dimensions must be positive");
    for (std::size_t i = 1; i < dims.size(); ++i)
        if (std::find(dims.begin(), dims.begin() + static_cast<std::ptrdiff_t>(i), dims[i]) != dims.begin() + static_cast<std::ptrdiff_t>(i))
            throw ConfigError("candidate dimensions contain duplicates");
    canonical_methods(cfg);
    if (cfg.knn_k < 1) throw ConfigError("knn_k must be positive");
    if (cfg.forest_trees < 1) throw ConfigError("forest_trees must be positive");
    for (const auto& [name, v] : {std::pair{"ridge_lambda", cfg.ridge_lambda}, std::pair{"lasso_lambda", cfg.lasso_lambda}})
        if (v && !(*v >= 0)) throw ConfigError(std::string(name) + " must be non-negative");
    for (const auto& [name, v] : {std::pair{"svr.c", cfg.svr_c}, std::pair{"svr.epsilon", cfg.svr_epsilon},
                                  std::pair{"svr.gamma", cfg.svr_gamma}})
        if (v && !(*v > 0)) throw ConfigError(std::string(name) + " must be positive");
    const bool uses_images = cfg.feature == FeatureKind::appearance || cfg.feature == FeatureKind::fused;
    if (uses_images && cfg.descriptors.empty()) throw ConfigError("appearance feature needs at least one descriptor");
    if (cfg.appearance.crop_size < pyramid_min_side) throw ConfigError("crop_size must be at least 32");
    if (cfg.appearance.pyramid_levels < 1) throw ConfigError("pyramid_levels must be positive");
    if (cfg.appearance.block_dims < 1 || cfg.fusion_dims < 1) throw ConfigError("reduction dimensions must be positive");
}

// ---------------------------------------------------------------------------
// Configuration file

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& js, const char* key, std::optional<T>& out) {
    if (js.contains(key) && !js[key].is_null()) out = js[key].get<T>();
}

template <typename T>
nlohmann::json opt_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace detail

/// Unknown keys are rejected so typos do not silently fall back to defaults.
/// A relative manifest path is resolved against `base_dir`.
inline ExperimentConfig config_from_json(const nlohmann::json& js, const std::filesystem::path& base_dir = {}) {
    static const std::vector<std::string> known{
        "manifest", "feature", "task", "gender", "preprocess", "descriptors", "dims", "methods", "cv", "seed",
        "per_trait_dims", "pca_global", "knn_k", "forest_trees", "ridge_lambda", "lasso_lambda", "svr",
        "appearance", "fusion_dims", "threads"};
    if (!js.is_object()) throw ConfigError("configuration must be a JSON object");
    for (const auto& [k, v] : js.items())
        if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown configuration key '" + k + "'");
    ExperimentConfig c;
    try {
        if (js.contains("manifest")) {
            std::filesystem::path p = js["manifest"].get<std::string>();
            c.manifest = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        }
        if (js.contains("feature")) c.feature = feature_from_string(js["feature"].get<std::string>());
        if (js.contains("task")) c.task = task_from_string(js["task"].get<std::string>());
        if (js.contains("gender")) c.gender = gender_filter_from_string(js["gender"].get<std::string>());
        if (js.contains("preprocess")) c.preprocess = preprocess_from_string(js["preprocess"].get<std::string>());
        if (js.contains("descriptors")) {
            c.descriptors.clear();
            for (const auto& d : js["descriptors"]) c.descriptors.push_back(descriptor_from_string(d.get<std::string>()));
        }
        if (js.contains("dims")) c.dims = js["dims"].get<std::vector<int>>();
        if (js.contains("methods")) c.methods = js["methods"].get<std::vector<std::string>>();
        if (js.contains("cv")) {
            const auto& cv = js["cv"];
            c.cv.folds = cv.value("folds", c.cv.folds);
            c.cv.repeats = cv.value("repeats", c.cv.repeats);
            c.cv.stratified = cv.value("stratified", c.cv.stratified);
            c.cv.pooled_accuracy = cv.value("pooled_accuracy", c.cv.pooled_accuracy);
        }
        c.cv.master_seed = js.value("seed", std::uint64_t{0});
        c.cv.threads = js.value("threads", 0U);
        c.per_trait_dims = js.value("per_trait_dims", false);
        c.pca_global = js.value("pca_global", false);
        c.knn_k = js.value("knn_k", 5);
        c.forest_trees = js.value("forest_trees", 100);
        detail::read_opt(js, "ridge_lambda", c.ridge_lambda);
        detail::read_opt(js, "lasso_lambda", c.lasso_lambda);
        if (js.contains("svr")) {
            detail::read_opt(js["svr"], "c", c.svr_c);
            detail::read_opt(js["svr"], "epsilon", c.svr_epsilon);
            detail::read_opt(js["svr"], "gamma", c.svr_gamma);
        }
        if (js.contains("appearance")) {
            const auto& a = js["appearance"];
            c.appearance.crop_size = a.value("crop_size", c.appearance.crop_size);
            c.appearance.pyramid_levels = a.value("pyramid_levels", c.appearance.pyramid_levels);
            c.appearance.block_dims = a.value("block_dims", c.appearance.block_dims);
            c.appearance.descriptors.msk.keypoints = a.value("msk_keypoints", c.appearance.descriptors.msk.keypoints);
        }
        c.fusion_dims = js.value("fusion_dims", c.fusion_dims);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed configuration: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open configuration " + path.string());
    nlohmann::json js;
    try {
        in >> js;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("configuration " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(js, path.parent_path());
}

/// Every setting that influences results (thread count and manifest location excluded).
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json js;
    js["feature"] = to_string(c.feature);
    js["task"] = to_string(c.task);
    js["gender"] = to_string(c.gender);
    js["preprocess"] = to_string(c.preprocess);
    js["descriptors"] = nlohmann::json::array();
    for (auto d : c.descriptors) js["descriptors"].push_back(to_string(d));
    js["dims"] = c.effective_dims();
    js["methods"] = canonical_methods(c);
    js["cv"] = {{"folds", c.cv.folds}, {"repeats", c.cv.repeats}, {"stratified", c.cv.stratified},
                {"pooled_accuracy", c.cv.pooled_accuracy}};
    js["seed"] = c.cv.master_seed;
    js["per_trait_dims"] = c.per_trait_dims;
    js["pca_global"] = c.pca_global;
    js["knn_k"] = c.knn_k;
    js["forest_trees"] = c.forest_trees;
    js["ridge_lambda"] = detail::opt_json(c.ridge_lambda);
    js["lasso_lambda"] = detail::opt_json(c.lasso_lambda);
    js["svr"] = {{"c", detail::opt_json(c.svr_c)}, {"epsilon", detail::opt_json(c.svr_epsilon)},
                 {"gamma", detail::opt_json(c.svr_gamma)}};
    js["appearance"] = {{"crop_size", c.appearance.crop_size},
                        {"pyramid_levels", c.appearance.pyramid_levels},
                        {"block_dims", c.appearance.block_dims},
                        {"msk_keypoints", c.appearance.descriptors.msk.keypoints}};
    js["fusion_dims"] = c.fusion_dims;
    return js;
}

// ---------------------------------------------------------------------------
// Feature extraction

struct FeatureBlock {
    std::string name;
    Matrix raw;             ///< samples x raw length
    Index reduce_to = 0;    ///< per-block PCA size before concatenation; 0 keeps raw
};

struct FeatureGroup {
    std::string name;
    std::vector<FeatureBlock> blocks;
    Index reduce_to = 0;    ///< PCA size of the concatenated group; 0 keeps it
};

/// Raw features for every sample plus the staged reductions that turn them
/// into the final feature: groups are concatenated after their own reductions.
struct FeatureSet {
    std::vector<std::string> ids;
    std::vector<FeatureGroup> groups;
    std::vector<LabelSet> labels;

    [[nodiscard]] std::size_t size() const { return ids.size(); }
};

/// Align (pupils to fixed targets), warp to the mean shape, crop, and
/// optionally mask. The mask follows the same geometric chain as the face.
inline GrayImage preprocess_face(const GrayImage& img, const LandmarkSet& lm, const MeanShape& mean,
                                 const std::optional<GrayImage>& mask, const AppearanceParams& p) {
    const AlignParams align{};
    const auto [aligned, t] = align_image(img, lm.left_pupil(), lm.right_pupil(), align);
    const auto [lt, rt] = align.targets(aligned.width, aligned.height);
    const LandmarkSet moved = transform(lm, t);
    const Point2 canon_l{-canonical_pupil_distance / 2, 0.0}, canon_r{canonical_pupil_distance / 2, 0.0};
    const auto canon_to_image = SimilarityTransform::from_pairs(canon_l, canon_r, lt, rt);
    std::vector<Point2> targets;
    for (const auto& q : mean.points) targets.push_back(canon_to_image.apply(q));
    targets[lm.pupils.left] = lt;
    targets[lm.pupils.right] = rt;

    const GrayImage warped = warp_to_mean(aligned, moved.points, targets, align.fill);
    auto [face, rect] = crop_face(warped, lt, rt, CropParams{p.crop_size, align.fill});
    if (!mask) return face;

    if (mask->width != img.width || mask->height != img.height)
        throw DimensionError("mask size does not match image size");
    const GrayImage m_aligned = resample_similarity(*mask, t, aligned.width, aligned.height, 0);
    const GrayImage m_warped = warp_to_mean(m_aligned, moved.points, targets, 0);
    auto [m_crop, m_rect] = crop_face(m_warped, lt, rt, CropParams{p.crop_size, 0});
    for (auto& v : m_crop.pixels) v = v >= 128 ? 255 : 0;
    return apply_mask(face, m_crop, align.fill);
}

/// Raw descriptor vectors (one per requested kind) of a preprocessed face.
inline std::vector<Vector> raw_descriptors(const GrayImage& face, const AppearanceParams& p,
                                           const std::vector<DescriptorKind>& kinds) {
    const Pyramid pyr = build_pyramid(face, p.pyramid_levels);
    return compute_descriptors(kinds, pyr, p.descriptors);
}

namespace detail {

inline LandmarkSet normalized(const LandmarkSet& s) { return normalize_landmarks(s).first; }

inline FeatureGroup structural_group(const Manifest& m) {
    std::vector<LandmarkSet> norm;
    for (const auto& s : m.samples) norm.push_back(normalized(s.landmarks));
    const MeanShape mean = mean_shape(norm);
    FeatureBlock b{"structural", Matrix(static_cast<Index>(m.samples.size()), static_cast<Index>(structural_length)), 0};
    for (std::size_t i = 0; i < norm.size(); ++i) b.raw.row(static_cast<Index>(i)) = structural_feature(norm[i], mean).transpose();
    return {"structural", {std::move(b)}, 0};
}

inline FeatureGroup fingerprint_group(const Manifest& m) {
    FeatureBlock b{"fingerprint", Matrix(static_cast<Index>(m.samples.size()), static_cast<Index>(fingerprint_length)), 0};
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        const auto& s = m.samples[i];
        if (s.minutiae.empty()) throw ValidationError("sample " + s.id + ": fingerprint feature needs minutiae");
        b.raw.row(static_cast<Index>(i)) = fingerprint_feature(s.minutiae).transpose();
    }
    return {"fingerprint", {std::move(b)}, 0};
}

inline FeatureGroup appearance_group(const Manifest& m, const ExperimentConfig& cfg) {
    std::vector<LandmarkSet> norm;
    for (const auto& s : m.samples) norm.push_back(normalized(s.landmarks));
    const MeanShape mean = mean_shape(norm);
    const bool segmented = cfg.preprocess == Preprocess::segmented;
    for (const auto& s : m.samples)
        if (segmented && !s.mask_path) throw ValidationError("sample " + s.id + ": segmented preprocessing needs a mask");

    std::vector<std::vector<Vector>> per_sample(m.samples.size());
    parallel_for(m.samples.size(), cfg.cv.threads, [&](std::size_t i) {
        const auto& s = m.samples[i];
        try {
            const GrayImage img = read_pgm(s.image_path);
            std::optional<GrayImage> mask;
            if (segmented) mask = read_pgm(*s.mask_path);
            const GrayImage face = preprocess_face(img, s.landmarks, mean, mask, cfg.appearance);
            per_sample[i] = raw_descriptors(face, cfg.appearance, cfg.descriptors);
        } catch (const Error& e) {
            throw Error(e.category(), "sample " + s.id + ": " + e.what());
        }
    });

    FeatureGroup g{"appearance", {}, 0};
    for (std::size_t k = 0; k < cfg.descriptors.size(); ++k) {
        const Index len = per_sample.front()[k].size();
        FeatureBlock b{to_string(cfg.descriptors[k]), Matrix(static_cast<Index>(m.samples.size()), len),
                       cfg.appearance.block_dims};
        for (std::size_t i = 0; i < m.samples.size(); ++i) {
            if (per_sample[i][k].size() != len)
                throw DimensionError("sample " + m.samples[i].id + ": " + b.name + " descriptor length differs");
            b.raw.row(static_cast<Index>(i)) = per_sample[i][k].transpose();
        }
        g.blocks.push_back(std::move(b));
    }
    return g;
}

}  // namespace detail

/// Raw features of the configured kind for the gender-filtered manifest.
inline FeatureSet extract_features(const Manifest& full, const ExperimentConfig& cfg) {
    const Manifest m = filter(full, cfg.gender);
    if (m.samples.empty()) throw ValidationError(std::string("no samples match gender filter '") + to_string(cfg.gender) + "'");
    FeatureSet fs;
    for (const auto& s : m.samples) {
        fs.ids.push_back(s.id);
        fs.labels.push_back(s.labels());
    }
    switch (cfg.feature) {
        case FeatureKind::structural: fs.groups.push_back(detail::structural_group(m)); break;
        case FeatureKind::fingerprint: fs.groups.push_back(detail::fingerprint_group(m)); break;
        case FeatureKind::appearance: fs.groups.push_back(detail::appearance_group(m, cfg)); break;
        case FeatureKind::fused: {
            auto s = detail::structural_group(m);
            auto a = detail::appearance_group(m, cfg);
            s.reduce_to = cfg.fusion_dims;
            a.reduce_to = cfg.fusion_dims;
            fs.groups.push_back(std::move(s));
            fs.groups.push_back(std::move(a));
            break;
        }
    }
    return fs;
}

/// Self-contained cache of extracted features (labels included) so that
/// method sweeps can skip image processing.
inline nlohmann::json features_to_json(const FeatureSet& fs) {
    nlohmann::json js;
    js["version"] = tool_version;
    js["ids"] = fs.ids;
    js["labels"] = nlohmann::json::array();
    for (const auto& l : fs.labels) js["labels"].push_back({{"binary", l.binary}, {"targets", l.targets}});
    js["groups"] = nlohmann::json::array();
    for (const auto& g : fs.groups) {
        nlohmann::json gj{{"name", g.name}, {"reduce_to", g.reduce_to}, {"blocks", nlohmann::json::array()}};
        for (const auto& b : g.blocks) {
            nlohmann::json rows = nlohmann::json::array();
            for (Index i = 0; i < b.raw.rows(); ++i) {
                const Vector r = b.raw.row(i).transpose();
                rows.push_back(std::vector<double>(r.data(), r.data() + r.size()));
            }
            gj["blocks"].push_back({{"name", b.name}, {"reduce_to", b.reduce_to}, {"rows", rows}});
        }
        js["groups"].push_back(gj);
    }
    return js;
}

inline FeatureSet features_from_json(const nlohmann::json& js) {
    FeatureSet fs;
    try {
        fs.ids = js.at("ids").get<std::vector<std::string>>();
        for (const auto& l : js.at("labels")) {
            LabelSet s;
            s.binary = l.at("binary").get<std::array<int, target_count>>();
            s.targets = l.at("targets").get<std::array<double, target_count>>();
            fs.labels.push_back(s);
        }
        for (const auto& gj : js.at("groups")) {
            FeatureGroup g{gj.at("name").get<std::string>(), {}, gj.at("reduce_to").get<Index>()};
            for (const auto& bj : gj.at("blocks")) {
                const auto& rows = bj.at("rows");
                if (rows.size() != fs.ids.size()) throw ValidationError("feature block row count differs from sample count");
                const Index cols = rows.empty() ? 0 : static_cast<Index>(rows[0].size());
                FeatureBlock b{bj.at("name").get<std::string>(), Matrix(static_cast<Index>(rows.size()), cols),
                               bj.at("reduce_to").get<Index>()};
                for (std::size_t i = 0; i < rows.size(); ++i) {
                    const auto v = rows[i].get<std::vector<double>>();
                    if (static_cast<Index>(v.size()) != cols) throw DimensionError("ragged feature block " + b.name);
                    for (Index j = 0; j < cols; ++j) b.raw(static_cast<Index>(i), j) = v[static_cast<std::size_t>(j)];
                }
                require_finite(b.raw, "cached features");
                g.blocks.push_back(std::move(b));
            }
            fs.groups.push_back(std::move(g));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed feature file: ") + e.what());
    }
    if (fs.labels.size() != fs.ids.size()) throw ValidationError("feature file label count differs from sample count");
    if (fs.groups.empty()) throw ValidationError("feature file has no feature groups");
    return fs;
}

inline FeatureSet load_features(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open feature file " + path.string());
    try {
        return features_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("feature file " + path.string() + " is not valid JSON: " + e.what());
    }
}

/// Applies the staged reductions of a FeatureSet with every PCA fitted on the
/// `train` rows only, and projects all samples to at most `max_dim` columns.
/// Column prefixes give the lower candidate dimensions.
class FoldFeatureBuilder {
public:
    FoldFeatureBuilder(const FeatureSet& fs, Index max_dim) : fs_(fs), max_dim_(max_dim) {
        if (fs.groups.size() == 1 && fs.groups[0].blocks.size() == 1 && fs.groups[0].reduce_to == 0 &&
            fs.groups[0].blocks[0].reduce_to == 0) {
            const Matrix& x = fs.groups[0].blocks[0].raw;
            direct_gram_ = x * x.transpose();
            return;
        }
        for (const auto& g : fs.groups) {
            std::vector<Matrix> grams;
            for (const auto& b : g.blocks) grams.push_back(b.reduce_to > 0 ? Matrix(b.raw * b.raw.transpose()) : Matrix());
            grams_.push_back(std::move(grams));
        }
    }

    [[nodiscard]] Matrix build(const std::vector<Index>& train) const {
        if (direct_gram_) return gram_pca_project(*direct_gram_, train, max_dim_);
        std::vector<Matrix> groups;
        Index total = 0;
        for (std::size_t gi = 0; gi < fs_.groups.size(); ++gi) {
            const auto& g = fs_.groups[gi];
            std::vector<Matrix> parts;
            Index width = 0;
            for (std::size_t bi = 0; bi < g.blocks.size(); ++bi) {
                const auto& b = g.blocks[bi];
                parts.push_back(b.reduce_to > 0 ? gram_pca_project(grams_[gi][bi], train, b.reduce_to) : b.raw);
                width += parts.back().cols();
            }
            Matrix joined = hcat(parts, width);
            if (g.reduce_to > 0) joined = pca_fit(select_rows(joined, train), g.reduce_to).transform(joined);
            total += joined.cols();
            groups.push_back(std::move(joined));
        }
        const Matrix z = hcat(groups, total);
        return pca_fit(select_rows(z, train), max_dim_).transform(z);
    }

private:
    static Matrix hcat(const std::vector<Matrix>& parts, Index width) {
        if (parts.size() == 1) return parts.front();
        Matrix out(parts.front().rows(), width);
        Index c = 0;
        for (const auto& p : parts) {
            out.middleCols(c, p.cols()) = p;
            c += p.cols();
        }
        return out;
    }

    const FeatureSet& fs_;
    Index max_dim_;
    std::vector<std::vector<Matrix>> grams_;
    std::optional<Matrix> direct_gram_;  ///< single unreduced block: skip the feature-space PCA
};

// ---------------------------------------------------------------------------
// Report

struct ReportCell {
    std::string target;
    std::string method;
    int dim = 0;
    std::optional<MetricSummary> accuracy;
    std::optional<RegressionSummary> regression;

    /// Mean accuracy (classification) or mean rmse (regression).
    [[nodiscard]] double score() const { return accuracy ? accuracy->mean : regression->rmse.mean; }
};

struct MethodDimension {
    std::string method;
    int trait_dim = 0;         ///< shared dimension over the 20 traits
    int intelligence_dim = 0;  ///< best single dimension for intelligence
    std::vector<double> normalized_sums;
};

struct Provenance {
    std::string version = tool_version;
    std::string config_hash;
    std::string manifest_hash;
    std::uint64_t seed = 0;
    nlohmann::json config;
};

struct Report {
    Provenance provenance;
    Task task = Task::classify;
    FeatureKind feature = FeatureKind::structural;
    GenderFilter gender = GenderFilter::all;
    std::vector<std::string> sample_ids;
    std::vector<int> dims;
    std::vector<std::string> methods;
    std::vector<std::string> targets;
    /// method -> targets x dims matrix of mean scores over the candidate sweep.
    std::map<std::string, Matrix> sweep;
    std::vector<MethodDimension> dimension_selection;
    std::vector<ReportCell> cells;  ///< target-major, methods in canonical order
    MethodSelection method_selection;

    [[nodiscard]] const ReportCell& cell(const std::string& target, const std::string& method) const {
        for (const auto& c : cells)
            if (c.target == target && c.method == method) return c;
        throw ValidationError("report has no cell for " + target + "/" + method);
    }
};

namespace detail {

inline ClassifierSpec classifier_spec(const std::string& name, const ExperimentConfig& cfg) {
    ClassifierSpec s;
    s.kind = *classifier_from_string(name);
    s.neighbors = cfg.knn_k;
    s.trees = cfg.forest_trees;
    return s;
}

inline RegressorSpec regressor_spec(const std::string& name, const ExperimentConfig& cfg) {
    RegressorSpec s;
    s.kind = *regressor_from_string(name);
    s.neighbors = cfg.knn_k;
    if (s.kind == RegressorKind::ridge) s.lambda = cfg.ridge_lambda;
    if (s.kind == RegressorKind::lasso) s.lambda = cfg.lasso_lambda;
    s.c = cfg.svr_c;
    s.epsilon = cfg.svr_epsilon;
    s.gamma = cfg.svr_gamma;
    return s;
}

/// Index of the best entry (max or min); ties go to the smallest dimension.
inline std::size_t best_dim_index(const std::vector<double>& scores, const std::vector<int>& dims, bool maximize) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.size(); ++j) {
        const bool better = maximize ? scores[j] > scores[best] : scores[j] < scores[best];
        const bool tie = scores[j] == scores[best] && dims[j] < dims[best];
        if (better || tie) best = j;
    }
    return best;
}

}  // namespace detail

/// Evaluates every (target, method, candidate dimension) by repeated CV on
/// `fs`, selects dimensions (shared over traits, best single for
/// intelligence, or per target) and the winning method.
inline Report run_experiment_on(const FeatureSet& fs, const ExperimentConfig& cfg) {
    validate(cfg);
    const auto methods = canonical_methods(cfg);
    const auto dims = cfg.effective_dims();
    const Index max_dim = *std::max_element(dims.begin(), dims.end());
    const std::size_t n = fs.size();
    const bool classify = cfg.task == Task::classify;
    if (n < static_cast<std::size_t>(cfg.cv.folds))
        throw ValidationError("need at least " + std::to_string(cfg.cv.folds) + " samples, got " + std::to_string(n));

    const Index train_capacity = static_cast<Index>(n - (n + static_cast<std::size_t>(cfg.cv.folds) - 1) / static_cast<std::size_t>(cfg.cv.folds)) - 1;
    for (const auto& g : fs.groups) {
        for (const auto& b : g.blocks)
            if (b.reduce_to > std::min<Index>(train_capacity, b.raw.cols()))
                warn(b.name + " block limited to " + std::to_string(std::min<Index>(train_capacity, b.raw.cols())) +
                     " of " + std::to_string(b.reduce_to) + " dimensions by the training-set size");
        if (g.reduce_to > train_capacity)
            warn(g.name + " group limited to " + std::to_string(train_capacity) + " of " + std::to_string(g.reduce_to) +
                 " dimensions by the training-set size");
    }

    const FoldFeatureBuilder builder(fs, max_dim);
    std::optional<Matrix> global;
    if (cfg.pca_global) {
        std::vector<Index> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<Index>(i);
        global = builder.build(all);
    }
    auto features = [&](const std::vector<Index>& train) { return global ? *global : builder.build(train); };

    const std::size_t n_models = methods.size() * dims.size();
    auto model_index = [&](std::size_t m, std::size_t d) { return m * dims.size() + d; };

    Report rep;
    rep.task = cfg.task;
    rep.feature = cfg.feature;
    rep.gender = cfg.gender;
    rep.sample_ids = fs.ids;
    rep.dims = dims;
    rep.methods = methods;
    for (std::size_t t = 0; t < target_count; ++t) rep.targets.push_back(target_name(t));

    std::vector<std::vector<MetricSummary>> acc(target_count);
    std::vector<std::vector<RegressionSummary>> reg(target_count);
    for (std::size_t t = 0; t < target_count; ++t) {
        try {
            if (classify) {
                Labels y(n);
                for (std::size_t i = 0; i < n; ++i) y[i] = fs.labels[i].binary[t];
                acc[t] = cross_validate_classify_multi(
                    [&](const std::vector<Index>& train, const std::vector<Index>& test, std::uint64_t seed) {
                        const Matrix z = features(train);
                        const Labels ytr = select(y, train);
                        std::vector<Labels> out(n_models);
                        for (std::size_t m = 0; m < methods.size(); ++m) {
                            auto spec = detail::classifier_spec(methods[m], cfg);
                            spec.seed = derive_seed(seed, m);
                            for (std::size_t d = 0; d < dims.size(); ++d) {
                                const Index k = std::min<Index>(dims[d], z.cols());
                                const Matrix zk = z.leftCols(k);
                                out[model_index(m, d)] =
                                    fit_classifier(spec, select_rows(zk, train), ytr).predict(select_rows(zk, test));
                            }
                        }
                        return out;
                    },
                    n_models, y, cfg.cv);
            } else {
                Vector y(static_cast<Index>(n));
                for (std::size_t i = 0; i < n; ++i) y[static_cast<Index>(i)] = fs.labels[i].targets[t];
                reg[t] = cross_validate_regress_multi(
                    [&](const std::vector<Index>& train, const std::vector<Index>& test, std::uint64_t seed) {
                        const Matrix z = features(train);
                        Vector ytr(static_cast<Index>(train.size()));
                        for (std::size_t i = 0; i < train.size(); ++i) ytr[static_cast<Index>(i)] = y[train[i]];
                        std::vector<Vector> out(n_models);
                        for (std::size_t m = 0; m < methods.size(); ++m) {
                            auto spec = detail::regressor_spec(methods[m], cfg);
                            spec.seed = derive_seed(seed, m);
                            for (std::size_t d = 0; d < dims.size(); ++d) {
                                const Index k = std::min<Index>(dims[d], z.cols());
                                const Matrix zk = z.leftCols(k);
                                out[model_index(m, d)] =
                                    fit_regressor(spec, select_rows(zk, train), ytr).predict(select_rows(zk, test));
                            }
                        }
                        return out;
                    },
                    n_models, y, cfg.cv);
            }
        } catch (const Error& e) {
            throw Error(e.category(), "target " + target_name(t) + ": " + e.what());
        }
    }

    auto score = [&](std::size_t t, std::size_t m, std::size_t d) {
        const auto i = model_index(m, d);
        return classify ? acc[t][i].mean : reg[t][i].rmse.mean;
    };
    const SelectionMode mode = classify ? SelectionMode::maximize : SelectionMode::minimize;

    for (std::size_t m = 0; m < methods.size(); ++m) {
        Matrix sw(static_cast<Index>(target_count), static_cast<Index>(dims.size()));
        for (std::size_t t = 0; t < target_count; ++t)
            for (std::size_t d = 0; d < dims.size(); ++d) sw(static_cast<Index>(t), static_cast<Index>(d)) = score(t, m, d);
        rep.sweep[methods[m]] = sw;

        AccuracyMatrix am{dims, sw.topRows(static_cast<Index>(trait_count))};
        MethodDimension md;
        md.method = methods[m];
        md.trait_dim = select_dimension(am, mode);
        const Vector sums = normalized_column_sums(am, mode);
        md.normalized_sums.assign(sums.data(), sums.data() + sums.size());
        std::vector<double> intel(dims.size());
        for (std::size_t d = 0; d < dims.size(); ++d) intel[d] = score(trait_count, m, d);
        md.intelligence_dim = dims[detail::best_dim_index(intel, dims, classify)];
        rep.dimension_selection.push_back(md);
    }

    for (std::size_t t = 0; t < target_count; ++t) {
        for (std::size_t m = 0; m < methods.size(); ++m) {
            std::size_t d = 0;
            if (cfg.per_trait_dims) {
                std::vector<double> s(dims.size());
                for (std::size_t j = 0; j < dims.size(); ++j) s[j] = score(t, m, j);
                d = detail::best_dim_index(s, dims, classify);
            } else {
                const int want = t < trait_count ? rep.dimension_selection[m].trait_dim
                                                 : rep.dimension_selection[m].intelligence_dim;
                d = static_cast<std::size_t>(std::find(dims.begin(), dims.end(), want) - dims.begin());
            }
            ReportCell c;
            c.target = target_name(t);
            c.method = methods[m];
            c.dim = dims[d];
            if (classify)
                c.accuracy = acc[t][model_index(m, d)];
            else
                c.regression = reg[t][model_index(m, d)];
            rep.cells.push_back(std::move(c));
        }
    }

    Matrix table(static_cast<Index>(methods.size()), static_cast<Index>(trait_count));
    for (std::size_t m = 0; m < methods.size(); ++m)
        for (std::size_t t = 0; t < trait_count; ++t)
            table(static_cast<Index>(m), static_cast<Index>(t)) = rep.cells[t * methods.size() + m].score();
    rep.method_selection = select_best_method(table, methods, !classify);

    rep.provenance.config = config_to_json(cfg);
    rep.provenance.config_hash = detail::hex64(detail::fnv1a(rep.provenance.config.dump()));
    rep.provenance.seed = cfg.cv.master_seed;
    return rep;
}

inline std::string file_hash(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return detail::hex64(detail::fnv1a(data));
}

/// Loads the manifest, extracts features and runs the protocol.
inline Report run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    if (cfg.manifest.empty()) throw ConfigError("no manifest given");
    const Manifest m = load_manifest(cfg.manifest);
    const FeatureSet fs = extract_features(m, cfg);
    Report r = run_experiment_on(fs, cfg);
    r.provenance.manifest_hash = file_hash(cfg.manifest);
    return r;
}

// ---------------------------------------------------------------------------
// Serialisation

namespace detail {

inline nlohmann::json to_json(const MetricSummary& s) {
    return {{"mean", s.mean}, {"std", s.std}, {"ci95", s.ci95}, {"per_repeat", s.per_repeat}};
}

inline MetricSummary metric_from_json(const nlohmann::json& j) {
    MetricSummary s;
    s.mean = j.at("mean").get<double>();
    s.std = j.at("std").get<double>();
    s.ci95 = j.at("ci95").get<double>();
    s.per_repeat = j.at("per_repeat").get<std::vector<double>>();
    return s;
}

inline nlohmann::json opt_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline std::optional<double> opt_number_from(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace detail

inline nlohmann::json report_to_json(const Report& r) {
    nlohmann::json js;
    js["provenance"] = {{"version", r.provenance.version},
                        {"config_hash", r.provenance.config_hash},
                        {"manifest_hash", r.provenance.manifest_hash},
                        {"seed", r.provenance.seed},
                        {"config", r.provenance.config}};
    js["task"] = to_string(r.task);
    js["feature"] = to_string(r.feature);
    js["gender"] = to_string(r.gender);
    js["sample_ids"] = r.sample_ids;
    js["dims"] = r.dims;
    js["methods"] = r.methods;
    js["targets"] = r.targets;
    nlohmann::json sweep = nlohmann::json::object();
    for (const auto& [m, mat] : r.sweep) {
        nlohmann::json per = nlohmann::json::object();
        for (Index t = 0; t < mat.rows(); ++t) {
            std::vector<double> row(mat.cols());
            for (Index d = 0; d < mat.cols(); ++d) row[static_cast<std::size_t>(d)] = mat(t, d);
            per[r.targets[static_cast<std::size_t>(t)]] = row;
        }
        sweep[m] = per;
    }
    js["sweep"] = sweep;
    js["dimension_selection"] = nlohmann::json::array();
    for (const auto& d : r.dimension_selection)
        js["dimension_selection"].push_back({{"method", d.method},
                                             {"trait_dim", d.trait_dim},
                                             {"intelligence_dim", d.intelligence_dim},
                                             {"normalized_sums", d.normalized_sums}});
    js["cells"] = nlohmann::json::array();
    for (const auto& c : r.cells) {
        nlohmann::json cj{{"target", c.target}, {"method", c.method}, {"dim", c.dim}};
        if (c.accuracy) cj["accuracy"] = detail::to_json(*c.accuracy);
        if (c.regression) {
            const auto& g = *c.regression;
            nlohmann::json rj;
            rj["rmse"] = detail::to_json(g.rmse);
            rj["pearson"] = detail::opt_number(g.pearson_r);
            rj["pearson_per_repeat"] = nlohmann::json::array();
            for (const auto& p : g.pearson_per_repeat) rj["pearson_per_repeat"].push_back(detail::opt_number(p));
            rj["residuals"] = nlohmann::json::array();
            for (const auto& e : g.residuals) rj["residuals"].push_back({e.sample, e.measured, e.predicted, e.residual});
            cj["regression"] = rj;
        }
        js["cells"].push_back(cj);
    }
    const auto& ms = r.method_selection;
    std::vector<std::string> winners;
    for (auto w : ms.winner_of_trait) winners.push_back(ms.methods[w]);
    js["method_selection"] = {{"methods", ms.methods}, {"winners", winners}, {"wins", ms.wins},
                              {"selected", ms.methods.empty() ? std::string() : ms.selected_name()}};
    return js;
}

inline Report report_from_json(const nlohmann::json& js) {
    Report r;
    try {
        const auto& p = js.at("provenance");
        r.provenance.version = p.at("version").get<std::string>();
        r.provenance.config_hash = p.at("config_hash").get<std::string>();
        r.provenance.manifest_hash = p.at("manifest_hash").get<std::string>();
        r.provenance.seed = p.at("seed").get<std::uint64_t>();
        r.provenance.config = p.at("config");
        r.task = task_from_string(js.at("task").get<std::string>());
        r.feature = feature_from_string(js.at("feature").get<std::string>());
        r.gender = gender_filter_from_string(js.at("gender").get<std::string>());
        r.sample_ids = js.at("sample_ids").get<std::vector<std::string>>();
        r.dims = js.at("dims").get<std::vector<int>>();
        r.methods = js.at("methods").get<std::vector<std::string>>();
        r.targets = js.at("targets").get<std::vector<std::string>>();
        for (const auto& [m, per] : js.at("sweep").items()) {
            Matrix mat(static_cast<Index>(r.targets.size()), static_cast<Index>(r.dims.size()));
            for (std::size_t t = 0; t < r.targets.size(); ++t) {
                const auto row = per.at(r.targets[t]).get<std::vector<double>>();
                if (row.size() != r.dims.size()) throw ValidationError("sweep row length mismatch");
                for (std::size_t d = 0; d < row.size(); ++d) mat(static_cast<Index>(t), static_cast<Index>(d)) = row[d];
            }
            r.sweep[m] = mat;
        }
        for (const auto& d : js.at("dimension_selection"))
            r.dimension_selection.push_back({d.at("method").get<std::string>(), d.at("trait_dim").get<int>(),
                                             d.at("intelligence_dim").get<int>(),
                                             d.at("normalized_sums").get<std::vector<double>>()});
        for (const auto& cj : js.at("cells")) {
            ReportCell c;
            c.target = cj.at("target").get<std::string>();
            c.method = cj.at("method").get<std::string>();
            c.dim = cj.at("dim").get<int>();
            if (cj.contains("accuracy")) c.accuracy = detail::metric_from_json(cj["accuracy"]);
            if (cj.contains("regression")) {
                const auto& rj = cj["regression"];
                RegressionSummary g;
                g.rmse = detail::metric_from_json(rj.at("rmse"));
                g.pearson_r = detail::opt_number_from(rj.at("pearson"));
                for (const auto& v : rj.at("pearson_per_repeat")) g.pearson_per_repeat.push_back(detail::opt_number_from(v));
                for (const auto& e : rj.at("residuals"))
                    g.residuals.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>(), e.at(2).get<double>(),
                                           e.at(3).get<double>()});
                c.regression = std::move(g);
            }
            if (!c.accuracy && !c.regression) throw ValidationError("report cell without results");
            r.cells.push_back(std::move(c));
        }
        const auto& ms = js.at("method_selection");
        r.method_selection.methods = ms.at("methods").get<std::vector<std::string>>();
        r.method_selection.wins = ms.at("wins").get<std::vector<int>>();
        for (const auto& w : ms.at("winners")) {
            const auto name = w.get<std::string>();
            const auto it = std::find(r.method_selection.methods.begin(), r.method_selection.methods.end(), name);
            if (it == r.method_selection.methods.end()) throw ValidationError("unknown winner method " + name);
            r.method_selection.winner_of_trait.push_back(static_cast<std::size_t>(it - r.method_selection.methods.begin()));
        }
        const auto sel = ms.at("selected").get<std::string>();
        const auto it = std::find(r.method_selection.methods.begin(), r.method_selection.methods.end(), sel);
        r.method_selection.selected = static_cast<std::size_t>(it - r.method_selection.methods.begin());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed report: ") + e.what());
    }
    return r;
}

// CSV form: one row per JSON leaf, "pointer,value" with the value as a JSON literal.

namespace detail {

inline std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

}  // namespace detail

inline std::string report_to_csv(const Report& r) {
    std::string out = "pointer,value\n";
    const auto flat = report_to_json(r).flatten();
    for (const auto& [k, v] : flat.items())
        out += detail::csv_quote(k) + "," + detail::csv_quote(v.dump()) + "\n";
    return out;
}

inline Report report_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "pointer,value") throw ValidationError("not a report CSV");
    nlohmann::json flat = nlohmann::json::object();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::csv_split(line);
        if (f.size() != 2) throw ValidationError("malformed report CSV row: " + line);
        try {
            flat[f[0]] = nlohmann::json::parse(f[1]);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("malformed report CSV value: " + f[1]);
        }
    }
    return report_from_json(flat.unflatten());
}

/// Table cell: percentages with the confidence interval in parentheses.
inline std::string format_accuracy_cell(double mean_percent, double ci_percent) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f(%.1f)", mean_percent, ci_percent);
    return buf;
}

inline std::string display_name(const std::string& method, Task task) {
    static const std::map<std::string, std::string> cls{
        {"parzen", "Parzen"}, {"dtree", "DTree"}, {"knn", "KNN"}, {"gnb", "NaiveB"}, {"rforest", "RF"}};
    static const std::map<std::string, std::string> rgr{{"ols", "Linear"}, {"ridge", "Ridge"}, {"lasso", "Lasso"},
                                                        {"pinv", "Pinv"},  {"knn", "KNN"},     {"svr", "SVM"}};
    const auto& m = task == Task::classify ? cls : rgr;
    const auto it = m.find(method);
    return it == m.end() ? method : it->second;
}

/// Two stacked tables of ten traits each (intelligence closes the second),
/// followed by the selected dimensions and per-trait win counts.
inline std::string report_to_table(const Report& r) {
    const bool classify = r.task == Task::classify;
    std::ostringstream out;
    out << (classify ? "Mean accuracy % (95% CI)" : "Mean RMSE") << " | feature " << to_string(r.feature) << " | gender "
        << to_string(r.gender) << " | n " << r.sample_ids.size() << "\n\n";
    auto cell_text = [&](const ReportCell& c) {
        char buf[64];
        if (classify) return format_accuracy_cell(100.0 * c.accuracy->mean, 100.0 * c.accuracy->ci95);
        std::snprintf(buf, sizeof buf, "%.4f", c.regression->rmse.mean);
        return std::string(buf);
    };
    const std::size_t half = std::min(trait_count / 2, r.targets.size());
    for (std::size_t part = 0; part < 2; ++part) {
        const std::size_t lo = part == 0 ? 0 : half, hi = part == 0 ? half : r.targets.size();
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"Trait"});
        for (std::size_t t = lo; t < hi; ++t) rows[0].push_back(r.targets[t]);
        for (const auto& m : r.methods) {
            std::vector<std::string> row{display_name(m, r.task)};
            for (std::size_t t = lo; t < hi; ++t) row.push_back(cell_text(r.cell(r.targets[t], m)));
            rows.push_back(std::move(row));
        }
        std::vector<std::size_t> width(rows[0].size(), 0);
        for (const auto& row : rows)
            for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                out << (i ? " | " : "") << row[i] << std::string(width[i] - row[i].size(), ' ');
            }
            out << "\n";
        }
        out << "\n";
    }
    out << "Method | traits dim | " << target_name(trait_count) << " dim | wins\n";
    for (std::size_t m = 0; m < r.methods.size(); ++m) {
        const auto& d = r.dimension_selection[m];
        out << display_name(r.methods[m], r.task) << (r.method_selection.selected == m ? " *" : "") << " | "
            << d.trait_dim << " | " << d.intelligence_dim << " | " << r.method_selection.wins[m] << "\n";
    }
    out << "selected method: " << display_name(r.method_selection.selected_name(), r.task) << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Output

enum class ReportFormat { json, csv, table };

inline ReportFormat report_format_from_string(const std::string& s) {
    if (s == "json") return ReportFormat::json;
    if (s == "csv") return ReportFormat::csv;
    if (s == "table" || s == "table-text" || s == "text") return ReportFormat::table;
    throw ConfigError("unknown report format '" + s + "'");
}

inline std::string render_report(const Report& r, ReportFormat f) {
    switch (f) {
        case ReportFormat::json: return report_to_json(r).dump(2) + "\n";
        case ReportFormat::csv: return report_to_csv(r);
        case ReportFormat::table: return report_to_table(r);
    }
    return {};
}

/// Writes `content` to a sibling temporary file and renames it into place.
inline void write_atomically(const std::filesystem::path& path, const std::string& content) {
    const auto dir = path.parent_path();
    if (!dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp);
            throw IoError("failed writing " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot move report into place at " + path.string() + ": " + ec.message());
    }
}

/// Residual CSV text for one cell: sample_id, measured, predicted, residual.
inline std::string residual_csv(const Report& r, const ReportCell& c) {
    std::string out = "sample_id,measured,predicted,residual\n";
    char buf[160];
    for (const auto& e : c.regression->residuals) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", e.measured, e.predicted, e.residual);
        out += detail::csv_quote(r.sample_ids.at(e.sample)) + buf;
    }
    return out;
}

/// Writes the report to `path`; with `residuals` on a regression report,
/// also one CSV per (target, method) under `<path stem>_residuals/`.
/// Returns every file written.
inline std::vector<std::filesystem::path> emit_report(const Report& r, const std::filesystem::path& path, ReportFormat f,
                                                      bool residuals) {
    std::vector<std::pair<std::filesystem::path, std::string>> files;
    files.emplace_back(path, render_report(r, f));
    if (residuals && r.task == Task::regress) {
        auto dir = path.parent_path() / (path.stem().string() + "_residuals");
        for (const auto& c : r.cells) files.emplace_back(dir / (c.target + "__" + c.method + ".csv"), residual_csv(r, c));
    }
    std::vector<std::filesystem::path> written;
    for (const auto& [p, text] : files) {
        write_atomically(p, text);
        written.push_back(p);
    }
    return written;
}

inline Report load_report(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open report " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.rfind("pointer,value", 0) == 0) return report_from_csv(text);
    try {
        return report_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("report " + path.string() + " is neither JSON nor report CSV: " + e.what());
    }
}

}  // namespace morphobench

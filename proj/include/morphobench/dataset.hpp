#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "geometry.hpp"
#include "image.hpp"
#include "learners.hpp"

namespace morphobench {

namespace fs = std::filesystem;

enum class Gender { male, female };

inline const char* to_string(Gender g) { return g == Gender::male ? "male" : "female"; }

inline Gender gender_from_string(const std::string& s) {
    if (s == "male" || s == "m" || s == "M") return Gender::male;
    if (s == "female" || s == "f" || s == "F") return Gender::female;
    throw ValidationError("unknown gender tag '" + s + "'");
}

/// 16 primary factors followed by the 4 second-order factors.
inline constexpr std::array<std::string_view, 20> trait_names{
    "Warm", "Reas", "Stab", "Domin", "Live", "Cons", "Soci", "Sens", "Vigil", "Abst",
    "Priv", "Appr", "Open", "Reli", "Perf", "Tens", "Adap", "Intro", "Impet", "Cowa"};
inline constexpr std::string_view intelligence_name = "Intell";
inline constexpr std::size_t trait_count = trait_names.size();
/// Traits plus intelligence.
inline constexpr std::size_t target_count = trait_count + 1;

inline std::string target_name(std::size_t t) {
    return std::string(t < trait_count ? trait_names[t] : intelligence_name);
}

inline std::optional<std::size_t> trait_index(std::string_view name) {
    for (std::size_t i = 0; i < trait_count; ++i)
        if (trait_names[i] == name) return i;
    return std::nullopt;
}

struct TraitScores {
    std::array<int, trait_count> scores{};
};

inline void validate(const TraitScores& t) {
    for (std::size_t i = 0; i < trait_count; ++i)
        if (t.scores[i] < 1 || t.scores[i] > 10)
            throw ValidationError("trait " + target_name(i) + " score " + std::to_string(t.scores[i]) +
                                  " outside [1, 10]");
}

struct IntelligenceScore {
    double percentile = 0.0;  ///< in [0, 1]
};

inline void validate(const IntelligenceScore& s) {
    if (!(s.percentile >= 0.0 && s.percentile <= 1.0))
        throw ValidationError("intelligence percentile " + std::to_string(s.percentile) + " outside [0, 1]");
}

/// Index t < 20 is a trait, index 20 is intelligence.
struct LabelSet {
    std::array<int, target_count> binary{};
    std::array<double, target_count> targets{};
};

inline int binarize_trait(int score) { return score >= 6 ? 1 : 0; }
inline int binarize_intelligence(double percentile) { return percentile > 0.75 ? 1 : 0; }

inline LabelSet binarize_labels(const TraitScores& traits, const IntelligenceScore& intelligence) {
    validate(traits);
    validate(intelligence);
    LabelSet l;
    for (std::size_t i = 0; i < trait_count; ++i) {
        l.binary[i] = binarize_trait(traits.scores[i]);
        l.targets[i] = traits.scores[i];
    }
    l.binary[trait_count] = binarize_intelligence(intelligence.percentile);
    l.targets[trait_count] = intelligence.percentile;
    return l;
}

// ---------------------------------------------------------------------------
// Manifest

struct SampleEntry {
    std::string id;
    Gender gender = Gender::male;
    fs::path landmarks_path;
    fs::path image_path;
    std::optional<fs::path> mask_path;
    std::optional<fs::path> minutiae_path;
    LandmarkSet landmarks;
    std::vector<Minutia> minutiae;
    TraitScores traits;
    IntelligenceScore intelligence;

    [[nodiscard]] LabelSet labels() const { return binarize_labels(traits, intelligence); }
};

struct Manifest {
    fs::path root;
    PupilIndices pupils;
    std::vector<SampleEntry> samples;
};

enum class GenderFilter { all, male, female };

inline Manifest filter(const Manifest& m, GenderFilter g) {
    if (g == GenderFilter::all) return m;
    Manifest out{m.root, m.pupils, {}};
    const Gender want = g == GenderFilter::male ? Gender::male : Gender::female;
    for (const auto& s : m.samples)
        if (s.gender == want) out.samples.push_back(s);
    return out;
}

namespace detail {

/// Splits a data row on commas and/or whitespace; blank and '#' lines yield nothing.
inline std::vector<double> parse_row(const std::string& line, const fs::path& file, std::size_t lineno) {
    std::string t = line;
    if (const auto hash = t.find('#'); hash != std::string::npos) t.resize(hash);
    std::replace(t.begin(), t.end(), ',', ' ');
    std::istringstream in(t);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size() || !std::isfinite(v))
            throw ValidationError(file.string() + ":" + std::to_string(lineno) + ": bad number '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

inline std::vector<std::vector<double>> read_rows(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto r = parse_row(line, file, lineno);
        if (!r.empty()) rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace detail

/// One "x,y" row per landmark.
inline LandmarkSet read_landmarks(const fs::path& file, PupilIndices pupils = {}) {
    LandmarkSet s;
    s.pupils = pupils;
    for (const auto& r : detail::read_rows(file)) {
        if (r.size() != 2) throw ValidationError(file.string() + ": landmark rows must have 2 values");
        s.points.push_back({r[0], r[1]});
    }
    validate(s);
    return s;
}

inline void write_landmarks(const fs::path& file, const LandmarkSet& s) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    char buf[96];
    for (const auto& p : s.points) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", p.x, p.y);
        out << buf;
    }
}

/// One "x,y,theta[,confidence]" row per minutia; theta in radians.
inline std::vector<Minutia> read_minutiae(const fs::path& file) {
    std::vector<Minutia> out;
    for (const auto& r : detail::read_rows(file)) {
        if (r.size() != 3 && r.size() != 4)
            throw ValidationError(file.string() + ": minutia rows must have 3 or 4 values");
        Minutia m{r[0], r[1], r[2], std::nullopt};
        if (r.size() == 4) m.confidence = r[3];
        out.push_back(m);
    }
    if (out.size() < minutiae_retained)
        throw ValidationError(file.string() + ": expected at least 16 minutiae, got " + std::to_string(out.size()));
    return out;
}

inline void write_minutiae(const fs::path& file, const std::vector<Minutia>& ms) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    char buf[128];
    for (const auto& m : ms) {
        if (m.confidence)
            std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.4f\n", m.x, m.y, m.theta, *m.confidence);
        else
            std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n", m.x, m.y, m.theta);
        out << buf;
    }
}

namespace detail {

inline fs::path require_file(const fs::path& root, const nlohmann::json& js, const std::string& id,
                             const char* field) {
    if (!js.contains(field) || !js[field].is_string())
        throw ValidationError("sample " + id + ": missing '" + field + "' path");
    fs::path p = root / js[field].get<std::string>();
    if (!fs::is_regular_file(p)) throw IoError("sample " + id + ": " + field + " file not found: " + p.string());
    return p;
}

inline int parse_score(const nlohmann::json& v, const std::string& id, const std::string& name) {
    if (!v.is_number()) throw ValidationError("sample " + id + ": trait " + name + " is not a number");
    const double d = v.get<double>();
    if (d != std::floor(d)) throw ValidationError("sample " + id + ": trait " + name + " is not an integer");
    if (d < 1 || d > 10)
        throw ValidationError("sample " + id + ": trait " + name + " score " + v.dump() + " outside [1, 10]");
    return static_cast<int>(d);
}

}  // namespace detail

/// Reads a JSON manifest. Paths inside are relative to the manifest's
/// directory. Intelligence values above 1 are read as percentages unless
/// "intelligence_scale" says otherwise.
inline Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    nlohmann::json js;
    try {
        in >> js;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!js.is_object() || !js.contains("samples") || !js["samples"].is_array())
        throw ValidationError("manifest must be an object with a 'samples' array");

    Manifest m;
    m.root = path.parent_path();
    if (js.contains("pupils")) {
        const auto& p = js["pupils"];
        if (!p.is_array() || p.size() != 2) throw ValidationError("'pupils' must list two landmark indices");
        m.pupils = {p[0].get<std::size_t>(), p[1].get<std::size_t>()};
        if (m.pupils.left >= landmark_count || m.pupils.right >= landmark_count || m.pupils.left == m.pupils.right)
            throw ValidationError("'pupils' indices must be distinct and below 21");
    }
    const std::string scale = js.value("intelligence_scale", std::string("auto"));
    if (scale != "auto" && scale != "unit" && scale != "percent")
        throw ValidationError("intelligence_scale must be auto, unit or percent");

    std::set<std::string> seen;
    for (const auto& s : js["samples"]) {
        SampleEntry e;
        if (!s.contains("id")) throw ValidationError("sample without 'id'");
        e.id = s["id"].is_string() ? s["id"].get<std::string>() : s["id"].dump();
        if (!seen.insert(e.id).second) throw ValidationError("duplicate sample id " + e.id);
        if (!s.contains("gender") || !s["gender"].is_string())
            throw ValidationError("sample " + e.id + ": missing gender");
        e.gender = gender_from_string(s["gender"].get<std::string>());

        e.landmarks_path = detail::require_file(m.root, s, e.id, "landmarks");
        e.image_path = detail::require_file(m.root, s, e.id, "image");
        if (s.contains("mask") && !s["mask"].is_null()) e.mask_path = detail::require_file(m.root, s, e.id, "mask");
        if (s.contains("minutiae") && !s["minutiae"].is_null())
            e.minutiae_path = detail::require_file(m.root, s, e.id, "minutiae");

        try {
            e.landmarks = read_landmarks(e.landmarks_path, m.pupils);
            if (e.minutiae_path) e.minutiae = read_minutiae(*e.minutiae_path);
        } catch (const ValidationError& err) {
            throw ValidationError("sample " + e.id + ": " + err.what());
        }

        if (!s.contains("traits")) throw ValidationError("sample " + e.id + ": missing traits");
        const auto& tr = s["traits"];
        if (tr.is_array()) {
            if (tr.size() != trait_count) throw ValidationError("sample " + e.id + ": expected 20 trait scores");
            for (std::size_t i = 0; i < trait_count; ++i)
                e.traits.scores[i] = detail::parse_score(tr[i], e.id, target_name(i));
        } else if (tr.is_object()) {
            if (tr.size() != trait_count) throw ValidationError("sample " + e.id + ": expected 20 trait scores");
            for (std::size_t i = 0; i < trait_count; ++i) {
                const std::string name = target_name(i);
                if (!tr.contains(name)) throw ValidationError("sample " + e.id + ": missing trait " + name);
                e.traits.scores[i] = detail::parse_score(tr[name], e.id, name);
            }
        } else {
            throw ValidationError("sample " + e.id + ": traits must be an array or object");
        }

        if (!s.contains("intelligence") || !s["intelligence"].is_number())
            throw ValidationError("sample " + e.id + ": missing intelligence score");
        double iq = s["intelligence"].get<double>();
        if (scale == "percent" || (scale == "auto" && iq > 1.0)) iq /= 100.0;
        e.intelligence.percentile = iq;
        try {
            validate(e.intelligence);
        } catch (const ValidationError& err) {
            throw ValidationError("sample " + e.id + ": " + err.what());
        }
        m.samples.push_back(std::move(e));
    }
    if (m.samples.empty()) throw ValidationError("manifest lists no samples");
    return m;
}

// ---------------------------------------------------------------------------
// Synthetic controls

enum class PlantedModel { linear_signal, pure_noise };

inline const char* to_string(PlantedModel m) { return m == PlantedModel::linear_signal ? "linear-signal" : "pure-noise"; }

inline PlantedModel planted_model_from_string(const std::string& s) {
    if (s == "linear-signal" || s == "linear") return PlantedModel::linear_signal;
    if (s == "pure-noise" || s == "noise") return PlantedModel::pure_noise;
    throw ConfigError("unknown planted model '" + s + "'");
}

struct SyntheticSpec {
    std::size_t n = 100;
    std::size_t feature_dim = 5;
    PlantedModel model = PlantedModel::linear_signal;
    double noise = 0.0;
    std::uint64_t seed = 0;
};

struct SyntheticData {
    Matrix x;
    Labels labels;
    Vector targets;
    Vector coefficients;  ///< planted; zero in pure-noise mode
    double intercept = 0.0;
};

/// Linear-signal: y = x b + c + noise, labels mark the upper half of y (ties
/// broken by index), so classes are balanced. Pure-noise: labels are fair
/// coin flips redrawn until the class balance lies within 40-60%, targets
/// are independent normals.
inline SyntheticData synthesize_dataset(const SyntheticSpec& spec) {
    if (spec.n < 4) throw ValidationError("synthetic dataset needs n >= 4");
    if (spec.feature_dim < 1) throw ValidationError("synthetic dataset needs feature_dim >= 1");
    if (!(spec.noise >= 0.0)) throw ValidationError("noise must be non-negative");
    const auto n = static_cast<Index>(spec.n);
    const auto d = static_cast<Index>(spec.feature_dim);
    Rng rng(spec.seed);
    SyntheticData out;
    out.x.resize(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) out.x(i, j) = rng.normal();
    out.labels.assign(spec.n, 0);

    if (spec.model == PlantedModel::linear_signal) {
        out.coefficients.resize(d);
        for (Index j = 0; j < d; ++j) out.coefficients[j] = rng.uniform(0.5, 2.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        out.intercept = rng.uniform(-1.0, 1.0);
        out.targets = (out.x * out.coefficients).array() + out.intercept;
        for (Index i = 0; i < n; ++i) out.targets[i] += spec.noise * rng.normal();
        std::vector<Index> order(spec.n);
        for (std::size_t i = 0; i < spec.n; ++i) order[i] = static_cast<Index>(i);
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return out.targets[a] < out.targets[b]; });
        for (std::size_t r = spec.n / 2; r < spec.n; ++r) out.labels[static_cast<std::size_t>(order[r])] = 1;
    } else {
        out.coefficients = Vector::Zero(d);
        out.targets.resize(n);
        for (Index i = 0; i < n; ++i) out.targets[i] = rng.normal();
        const double lo = 0.4 * static_cast<double>(spec.n), hi = 0.6 * static_cast<double>(spec.n);
        for (;;) {
            std::size_t ones = 0;
            for (auto& l : out.labels) ones += static_cast<std::size_t>(l = rng.uniform() < 0.5 ? 1 : 0);
            if (static_cast<double>(ones) >= lo && static_cast<double>(ones) <= hi) break;
        }
    }
    return out;
}

/// Canonical face template (pupils at (-50, 0) and (50, 0), y down).
inline const std::array<Point2, landmark_count>& face_template() {
    static const std::array<Point2, landmark_count> t{{
        {-70, -30}, {-25, -35}, {25, -35}, {70, -30},  // brows
        {-72, 2},   {-50, 0},   {-28, 2},             // left eye
        {28, 2},    {50, 0},    {72, 2},              // right eye
        {-18, 55},  {0, 62},    {18, 55},             // nose
        {-35, 95},  {0, 88},    {35, 95},  {0, 103},  // mouth
        {0, 150},   {-85, 90},  {85, 90},             // chin, jaw
        {0, -5},                                      // nasion
    }};
    return t;
}

/// Traits whose scores follow the planted shape mode in linear-signal
/// manifests ("Vigil" with reversed sign). All other targets are noise.
inline constexpr std::array<std::string_view, 2> synthetic_signal_traits{"Cons", "Vigil"};

struct SyntheticManifestSpec {
    std::size_t n = 186;
    int image_size = 128;
    PlantedModel model = PlantedModel::linear_signal;
    std::uint64_t seed = 0;
    bool masks = true;
    bool minutiae = true;
    std::size_t minutiae_per_sample = 20;
};

namespace detail {

inline double segment_distance(Point2 p, Point2 a, Point2 b) {
    const Point2 ab = b - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = len2 > 0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return norm(p - (a + t * ab));
}

/// Synthetic face rendered in canonical coordinates and mapped into the
/// image by `to_image`. Returns (face, mask).
inline std::pair<GrayImage, GrayImage> render_face(const std::vector<Point2>& canon, const SimilarityTransform& to_image,
                                                   int size, Rng& rng) {
    GrayImage img(size, size, 40), mask(size, size, 0);
    const auto back = to_image.inverse();
    const double top = -60.0, bottom = canon[17].y;
    const double cy = 0.5 * (top + bottom), ry = 0.5 * (bottom - top);
    const double rx = 0.5 * (canon[19].x - canon[18].x) + 10.0;
    const std::array<std::pair<int, int>, 7> strokes{{{0, 1}, {2, 3}, {13, 14}, {14, 15}, {15, 16}, {16, 13}, {10, 12}}};
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const Point2 q = back.apply({static_cast<double>(x), static_cast<double>(y)});
            const double e = (q.x / rx) * (q.x / rx) + ((q.y - cy) / ry) * ((q.y - cy) / ry);
            double v = 40.0;
            if (e <= 1.0) {
                mask.at(x, y) = 255;
                v = 185.0 - 0.15 * q.y;
                for (int k : {5, 8}) v -= 120.0 * std::exp(-std::pow(norm(q - canon[static_cast<std::size_t>(k)]), 2) / (2 * 36.0));
                for (int k : {4, 6, 7, 9}) v -= 30.0 * std::exp(-std::pow(norm(q - canon[static_cast<std::size_t>(k)]), 2) / (2 * 16.0));
                v -= 40.0 * std::exp(-std::pow(norm(q - canon[11]), 2) / (2 * 25.0));
                for (const auto& [a, b] : strokes)
                    if (segment_distance(q, canon[static_cast<std::size_t>(a)], canon[static_cast<std::size_t>(b)]) < 3.5) v -= 70.0;
            }
            img.at(x, y) = to_byte(v + rng.normal(0.0, 4.0));
        }
    }
    return {img, mask};
}

}  // namespace detail

/// Writes a complete synthetic cohort (landmarks, PGM faces, masks, minutiae,
/// scores) under `dir` and returns the manifest path. Shape latent z1 carries
/// the planted signal (|z1| in [0.5, 1.5]); z2 is a nuisance mode.
inline fs::path write_synthetic_manifest(const fs::path& dir, const SyntheticManifestSpec& spec) {
    if (spec.n < 4) throw ValidationError("synthetic manifest needs n >= 4");
    if (spec.image_size < 32) throw ValidationError("synthetic image size must be at least 32");
    if (spec.minutiae && spec.minutiae_per_sample < minutiae_retained)
        throw ValidationError("synthetic minutiae count must be at least 16");
    for (const char* sub : {"landmarks", "images", "masks", "minutiae"}) fs::create_directories(dir / sub);

    Rng rng(spec.seed);
    const auto& tmpl = face_template();
    nlohmann::json js;
    js["version"] = 1;
    js["pupils"] = {5, 8};
    js["intelligence_scale"] = "unit";
    js["synthetic"] = {{"model", to_string(spec.model)}, {"seed", spec.seed}, {"n", spec.n}};
    js["samples"] = nlohmann::json::array();

    const double size = spec.image_size;
    for (std::size_t i = 0; i < spec.n; ++i) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "S%04zu", i + 1);
        const std::string id = idbuf;

        const double z1 = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
        const double z2 = rng.uniform(-1.5, 1.5);
        std::vector<Point2> canon(tmpl.begin(), tmpl.end());
        canon[13].x -= 12 * z1;
        canon[15].x += 12 * z1;
        for (int k : {0, 1, 2, 3}) canon[static_cast<std::size_t>(k)].y -= 8 * z1;
        canon[17].y += 10 * z1;
        for (int k : {10, 11, 12}) canon[static_cast<std::size_t>(k)].y += 8 * z2;
        canon[18].x -= 8 * z2;
        canon[19].x += 8 * z2;
        for (std::size_t k = 0; k < landmark_count; ++k) {
            if (k == 5 || k == 8) continue;
            canon[k].x += rng.normal(0.0, 1.0);
            canon[k].y += rng.normal(0.0, 1.0);
        }

        const double eye_dist = rng.uniform(0.27, 0.33) * size;
        const double angle = rng.uniform(-8.0, 8.0) * pi / 180.0;
        const Point2 mid{0.5 * size + rng.uniform(-0.03, 0.03) * size, 0.4 * size + rng.uniform(-0.03, 0.03) * size};
        const auto to_image = SimilarityTransform::from_params(angle, eye_dist / canonical_pupil_distance, mid);

        LandmarkSet lm;
        for (const auto& p : canon) lm.points.push_back(to_image.apply(p));
        write_landmarks(dir / "landmarks" / (id + ".txt"), lm);

        auto [face, mask] = detail::render_face(canon, to_image, spec.image_size, rng);
        write_pgm(dir / "images" / (id + ".pgm"), face);

        nlohmann::json s;
        s["id"] = id;
        s["gender"] = i % 2 == 0 ? "male" : "female";
        s["landmarks"] = "landmarks/" + id + ".txt";
        s["image"] = "images/" + id + ".pgm";
        if (spec.masks) {
            write_pgm(dir / "masks" / (id + ".pgm"), mask);
            s["mask"] = "masks/" + id + ".pgm";
        }
        if (spec.minutiae) {
            std::vector<Minutia> ms;
            for (std::size_t k = 0; k < spec.minutiae_per_sample; ++k)
                ms.push_back({rng.uniform(0, 300), rng.uniform(0, 400), rng.uniform(0, 2 * pi), rng.uniform()});
            write_minutiae(dir / "minutiae" / (id + ".txt"), ms);
            s["minutiae"] = "minutiae/" + id + ".txt";
        }

        nlohmann::json traits = nlohmann::json::object();
        for (std::size_t t = 0; t < trait_count; ++t) {
            int score = 1 + static_cast<int>(rng.below(10));
            if (spec.model == PlantedModel::linear_signal) {
                const int low = 1 + static_cast<int>(rng.below(5));
                if (trait_names[t] == synthetic_signal_traits[0]) score = z1 > 0 ? low + 5 : low;
                if (trait_names[t] == synthetic_signal_traits[1]) score = z1 > 0 ? low : low + 5;
            }
            traits[std::string(trait_names[t])] = score;
        }
        s["traits"] = traits;
        s["intelligence"] = std::round(rng.uniform() * 100.0) / 100.0;
        js["samples"].push_back(s);
    }
    const fs::path manifest = dir / "manifest.json";
    std::ofstream out(manifest);
    if (!out) throw IoError("cannot write " + manifest.string());
    out << js.dump(2) << '\n';
    return manifest;
}

}  // namespace morphobench

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "morphobench/experiment.hpp"

namespace mb = morphobench;
namespace fs = std::filesystem;

namespace {

/// Flags shared by `extract` and `run`; each one overrides the config file only when given.
struct ConfigFlags {
    std::string config;
    std::string manifest;
    std::string feature;
    std::string task;
    std::string gender;
    std::string preprocess;
    std::vector<std::string> descriptors;
    std::vector<int> dims;
    std::vector<std::string> methods;
    std::optional<int> folds;
    std::optional<int> repeats;
    std::optional<std::uint64_t> seed;
    bool pca_global = false;
    bool per_trait_dims = false;
    bool unstratified = false;
    bool pooled_accuracy = false;
    std::optional<int> knn_k;
    std::optional<int> trees;
    std::optional<double> ridge_lambda;
    std::optional<double> lasso_lambda;
    std::optional<double> svr_c;
    std::optional<double> svr_epsilon;
    std::optional<double> svr_gamma;
    std::optional<unsigned> threads;

    void add_to(CLI::App& app) {
        app.add_option("--config", config, "JSON configuration file");
        app.add_option("--manifest", manifest, "dataset manifest (JSON)");
        app.add_option("--feature", feature, "structural | appearance | fingerprint | fused");
        app.add_option("--task", task, "classify | regress");
        app.add_option("--gender", gender, "all | male | female");
        app.add_option("--preprocess", preprocess, "cropped | segmented");
        app.add_option("--descriptors", descriptors, "subset of hog lbp gabor gist msk")->delimiter(',');
        app.add_option("--dims", dims, "candidate dimensions, comma separated")->delimiter(',');
        app.add_option("--methods", methods, "learners, comma separated")->delimiter(',');
        app.add_option("--folds", folds);
        app.add_option("--repeats", repeats);
        app.add_option("--seed", seed, "master seed");
        app.add_flag("--pca-global", pca_global, "fit PCA on all samples (leaks test folds)");
        app.add_flag("--per-trait-dims", per_trait_dims, "choose the dimension per target");
        app.add_flag("--unstratified", unstratified, "plain instead of stratified folds");
        app.add_flag("--pooled-accuracy", pooled_accuracy, "accuracy over pooled fold predictions");
        app.add_option("--knn-k", knn_k);
        app.add_option("--trees", trees, "random forest size");
        app.add_option("--ridge-lambda", ridge_lambda);
        app.add_option("--lasso-lambda", lasso_lambda);
        app.add_option("--svr-c", svr_c);
        app.add_option("--svr-epsilon", svr_epsilon);
        app.add_option("--svr-gamma", svr_gamma);
        app.add_option("--threads", threads, "worker threads (0 = hardware)");
    }

    [[nodiscard]] mb::ExperimentConfig resolve() const {
        mb::ExperimentConfig c = config.empty() ? mb::ExperimentConfig{} : mb::load_config(config);
        if (!manifest.empty()) c.manifest = manifest;
        if (!feature.empty()) c.feature = mb::feature_from_string(feature);
        if (!task.empty()) c.task = mb::task_from_string(task);
        if (!gender.empty()) c.gender = mb::gender_filter_from_string(gender);
        if (!preprocess.empty()) c.preprocess = mb::preprocess_from_string(preprocess);
        if (!descriptors.empty()) {
            c.descriptors.clear();
            for (const auto& d : descriptors) c.descriptors.push_back(mb::descriptor_from_string(d));
        }
        if (!dims.empty()) c.dims = dims;
        if (!methods.empty()) c.methods = methods;
        if (folds) c.cv.folds = *folds;
        if (repeats) c.cv.repeats = *repeats;
        if (seed) c.cv.master_seed = *seed;
        if (pca_global) c.pca_global = true;
        if (per_trait_dims) c.per_trait_dims = true;
        if (unstratified) c.cv.stratified = false;
        if (pooled_accuracy) c.cv.pooled_accuracy = true;
        if (knn_k) c.knn_k = *knn_k;
        if (trees) c.forest_trees = *trees;
        if (ridge_lambda) c.ridge_lambda = ridge_lambda;
        if (lasso_lambda) c.lasso_lambda = lasso_lambda;
        if (svr_c) c.svr_c = svr_c;
        if (svr_epsilon) c.svr_epsilon = svr_epsilon;
        if (svr_gamma) c.svr_gamma = svr_gamma;
        if (threads) c.cv.threads = *threads;
        mb::validate(c);
        return c;
    }
};

void emit(const mb::Report& r, const std::string& out, const std::string& format, bool residuals) {
    const auto f = mb::report_format_from_string(format);
    if (out.empty() || out == "-") {
        if (residuals) throw mb::ConfigError("--emit-residuals needs --out");
        std::cout << mb::render_report(r, f);
        return;
    }
    for (const auto& p : mb::emit_report(r, out, f, residuals)) std::cerr << "wrote " << p.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Benchmark of trait prediction from face and fingerprint features"};
    app.set_version_flag("--version", mb::tool_version);
    app.require_subcommand(1);

    ConfigFlags extract_flags;
    std::string extract_out;
    auto* extract = app.add_subcommand("extract", "extract raw features into a reusable cache");
    extract_flags.add_to(*extract);
    extract->add_option("--out", extract_out, "feature cache (JSON)")->required();

    ConfigFlags run_flags;
    std::string run_features, run_out, run_format = "json";
    bool run_residuals = false;
    auto* run = app.add_subcommand("run", "run the full cross-validation protocol");
    run_flags.add_to(*run);
    run->add_option("--features", run_features, "feature cache from `extract` (skips extraction)");
    run->add_option("--out", run_out, "report path (default: stdout)");
    run->add_option("--format", run_format, "json | csv | table");
    run->add_flag("--emit-residuals", run_residuals, "per (target, method) residual CSVs for regression");

    std::string synth_out, synth_model = "linear-signal";
    mb::SyntheticManifestSpec synth_spec;
    bool synth_no_masks = false, synth_no_minutiae = false;
    auto* synth = app.add_subcommand("synth", "write a synthetic control dataset");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n", synth_spec.n, "number of subjects");
    synth->add_option("--size", synth_spec.image_size, "image side in pixels");
    synth->add_option("--model", synth_model, "linear-signal | pure-noise");
    synth->add_option("--seed", synth_spec.seed);
    synth->add_flag("--no-masks", synth_no_masks);
    synth->add_flag("--no-minutiae", synth_no_minutiae);

    std::string report_in, report_out, report_format = "table";
    bool report_residuals = false;
    auto* report = app.add_subcommand("report", "re-render a saved report");
    report->add_option("--in", report_in, "saved JSON or CSV report")->required();
    report->add_option("--out", report_out, "output path (default: stdout)");
    report->add_option("--format", report_format, "json | csv | table");
    report->add_flag("--emit-residuals", report_residuals);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(mb::ErrorCategory::config);
    }

    try {
        if (*extract) {
            const auto cfg = extract_flags.resolve();
            if (cfg.manifest.empty()) throw mb::ConfigError("no manifest given");
            const auto fset = mb::extract_features(mb::load_manifest(cfg.manifest), cfg);
            auto js = mb::features_to_json(fset);
            js["feature"] = mb::to_string(cfg.feature);
            js["gender"] = mb::to_string(cfg.gender);
            js["manifest_hash"] = mb::file_hash(cfg.manifest);
            mb::write_atomically(extract_out, js.dump() + "\n");
        } else if (*run) {
            const auto cfg = run_flags.resolve();
            mb::Report r;
            if (run_features.empty()) {
                r = mb::run_experiment(cfg);
            } else {
                std::ifstream in(run_features);
                if (!in) throw mb::IoError("cannot open feature file " + run_features);
                nlohmann::json js;
                try {
                    js = nlohmann::json::parse(in);
                } catch (const nlohmann::json::parse_error& e) {
                    throw mb::ValidationError("feature file " + run_features + " is not valid JSON: " + e.what());
                }
                if (js.value("feature", std::string()) != mb::to_string(cfg.feature) ||
                    js.value("gender", std::string()) != mb::to_string(cfg.gender))
                    throw mb::ConfigError("feature cache was extracted for a different feature or gender");
                r = mb::run_experiment_on(mb::features_from_json(js), cfg);
                r.provenance.manifest_hash = js.value("manifest_hash", std::string());
            }
            emit(r, run_out, run_format, run_residuals);
        } else if (*synth) {
            synth_spec.model = mb::planted_model_from_string(synth_model);
            synth_spec.masks = !synth_no_masks;
            synth_spec.minutiae = !synth_no_minutiae;
            const auto path = mb::write_synthetic_manifest(synth_out, synth_spec);
            std::cerr << "wrote " << path.string() << "\n";
        } else if (*report) {
            emit(mb::load_report(report_in), report_out, report_format, report_residuals);
        }
    } catch (const mb::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

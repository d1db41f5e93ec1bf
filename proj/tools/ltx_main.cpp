// ltx: command-line front end for the learning-to-reject benchmark.
#include "ltx/ltx.h"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;

namespace {

int verbosity = 1;

std::string default_output_dir() {
    const char* env = std::getenv("LTX_OUTPUT_DIR");
    return env && *env ? env : ".";
}

bool ok(ltx_status s, const std::string& what) {
    if (s == LTX_OK) return true;
    std::cerr << "ltx: " << what << ": " << ltx_last_error() << " (" << ltx_status_string(s) << ")\n";
    return false;
}

bool ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        std::cerr << "ltx: cannot create output directory " << dir << ": " << ec.message() << "\n";
        return false;
    }
    return true;
}

ltx_task parse_task(const std::string& s) { return s == "regression" ? LTX_REGRESSION : LTX_CLASSIFICATION; }

void log_line(const char* line, void*) {
    if (verbosity > 0) std::cerr << line << "\n";
}

std::string json_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learning to reject low-quality explanations: benchmark toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(ltx_version()));
    app.add_flag_callback("-q,--quiet", [] { verbosity = 0; }, "Suppress progress log lines");

    std::string out_dir = default_output_dir();

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic benchmark dataset");
    std::size_t synth_n = 0, synth_d = 10;
    std::string synth_task = "classification";
    double synth_mismatch = 1.0;
    std::uint64_t synth_seed = 0;
    std::string synth_name = "synthetic";
    synth->add_option("--n", synth_n, "Number of rows")->required()->check(CLI::PositiveNumber);
    synth->add_option("--d", synth_d, "Number of features")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--task", synth_task, "classification or regression")
        ->capture_default_str()
        ->check(CLI::IsMember({"classification", "regression"}));
    synth->add_option("--mismatch", synth_mismatch, "Oracle/predictor mismatch strength")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
    synth->add_option("--name", synth_name, "Output file stem")->capture_default_str();
    synth->add_option("-o,--out", out_dir, "Output directory (default $LTX_OUTPUT_DIR or .)");

    // run
    auto* run = app.add_subcommand("run", "Run a benchmark experiment from a JSON config");
    std::string config_path;
    std::optional<std::size_t> repeats, threads;
    std::optional<std::uint64_t> master_seed;
    run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("-o,--out", out_dir, "Output directory (default $LTX_OUTPUT_DIR or .)");
    run->add_option("--repeats", repeats, "Override the number of repeats")->check(CLI::PositiveNumber);
    run->add_option("--master-seed", master_seed, "Override the master seed");
    run->add_option("--threads", threads, "Override the worker count")->check(CLI::PositiveNumber);

    // ingest-annotations
    auto* ingest = app.add_subcommand("ingest-annotations", "Aggregate human annotations into judged explanations");
    std::string ann_csv, expl_csv;
    ingest->add_option("--annotations", ann_csv, "Annotation CSV")->required()->check(CLI::ExistingFile);
    ingest->add_option("--explanations", expl_csv, "Explanation CSV")->required()->check(CLI::ExistingFile);
    ingest->add_option("-o,--out", out_dir, "Output directory (default $LTX_OUTPUT_DIR or .)");

    // explain
    auto* explain = app.add_subcommand("explain", "Compute KernelSHAP explanations for every row of a dataset");
    std::string data_csv, target = "y", explain_task = "classification", model_json, predictor_kind;
    std::size_t samples = 2048, cap = 50, explain_threads = 1;
    double l2 = 1.0;
    std::uint64_t explain_seed = 0;
    explain->add_option("--data", data_csv, "Dataset CSV")->required()->check(CLI::ExistingFile);
    explain->add_option("--target", target, "Target column")->capture_default_str();
    explain->add_option("--task", explain_task, "classification or regression")
        ->capture_default_str()
        ->check(CLI::IsMember({"classification", "regression"}));
    auto* model_opt = explain->add_option("--model", model_json, "Saved predictor JSON")->check(CLI::ExistingFile);
    explain->add_option("--fit", predictor_kind, "Fit this predictor kind on the data instead of loading one")
        ->excludes(model_opt)
        ->check(CLI::IsMember({"linear_regression", "logistic_regression", "kernel_ridge", "kernel_logistic"}));
    explain->add_option("--l2", l2, "Ridge penalty for --fit")->capture_default_str();
    explain->add_option("--samples", samples, "Coalition samples per explanation")->capture_default_str();
    explain->add_option("--background", cap, "Background rows")->capture_default_str();
    explain->add_option("--seed", explain_seed, "Seed")->capture_default_str();
    explain->add_option("--threads", explain_threads, "Workers")->capture_default_str()->check(CLI::PositiveNumber);
    explain->add_option("-o,--out", out_dir, "Output directory (default $LTX_OUTPUT_DIR or .)");

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "Fit a rejector and calibrate its threshold for deployment");
    std::string kind = "ULER", train_csv, val_csv, params = "{}";
    std::optional<double> rate;
    bool match_train = false;
    calibrate->add_option("--rejector", kind, "Rejector kind")->capture_default_str();
    calibrate->add_option("--train", train_csv, "Judged explanations for training")->required()->check(CLI::ExistingFile);
    calibrate->add_option("--val", val_csv, "Judged explanations for calibration")->required()->check(CLI::ExistingFile);
    calibrate->add_option("--params", params, "Rejector hyperparameters as a JSON object")->capture_default_str();
    auto* rate_opt = calibrate->add_option("--rate", rate, "Target rejection rate")->check(CLI::Range(0.0, 1.0));
    calibrate->add_flag("--match-train", match_train, "Reject the training set's low-quality fraction")->excludes(rate_opt);
    calibrate->add_option("-o,--out", out_dir, "Output directory (default $LTX_OUTPUT_DIR or .)");

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed()) {
        if (!ensure_dir(out_dir)) return 1;
        const auto csv = (fs::path(out_dir) / (synth_name + ".csv")).string();
        const auto json = (fs::path(out_dir) / (synth_name + ".json")).string();
        if (!ok(ltx_synth_write(synth_n, synth_d, parse_task(synth_task), synth_mismatch, synth_seed, csv.c_str(),
                                json.c_str()),
                "synth"))
            return 1;
        if (verbosity > 0) std::cerr << "wrote " << csv << " and " << json << "\n";
        return 0;
    }

    if (run->parsed()) {
        if (!ensure_dir(out_dir)) return 1;
        std::string overrides = "{";
        auto add = [&](const std::string& key, const std::string& value) {
            if (overrides.size() > 1) overrides += ",";
            overrides += "\"" + key + "\":" + value;
        };
        if (repeats) add("repeats", std::to_string(*repeats));
        if (master_seed) add("master_seed", std::to_string(*master_seed));
        if (threads) add("threads", std::to_string(*threads));
        overrides += "}";
        if (!ok(ltx_run_experiment(config_path.c_str(), overrides.c_str(), out_dir.c_str(), log_line, nullptr), "run"))
            return 1;
        if (verbosity > 0) std::cerr << "wrote results.csv, curves.csv and summary.json to " << out_dir << "\n";
        return 0;
    }

    if (ingest->parsed()) {
        if (!ensure_dir(out_dir)) return 1;
        const auto judged = (fs::path(out_dir) / "judged.csv").string();
        const auto report = (fs::path(out_dir) / "exclusion_report.json").string();
        if (!ok(ltx_ingest_annotations(ann_csv.c_str(), expl_csv.c_str(), judged.c_str(), report.c_str()),
                "ingest-annotations"))
            return 1;
        if (verbosity > 0) std::cerr << "wrote " << judged << " and " << report << "\n";
        return 0;
    }

    if (explain->parsed()) {
        if (model_json.empty() && predictor_kind.empty()) {
            std::cerr << "ltx explain: one of --model or --fit is required\n";
            return 2;
        }
        if (!ensure_dir(out_dir)) return 1;
        ltx_dataset* ds = nullptr;
        if (!ok(ltx_dataset_load_csv(data_csv.c_str(), target.c_str(), parse_task(explain_task), &ds), "load dataset"))
            return 1;
        ltx_predictor* p = nullptr;
        bool good;
        if (!model_json.empty()) {
            good = ok(ltx_predictor_load(model_json.c_str(), &p), "load model");
        } else {
            const auto saved = (fs::path(out_dir) / "model.json").string();
            good = ok(ltx_predictor_fit(ds, predictor_kind.c_str(), l2, 0.0, explain_seed, &p), "fit predictor") &&
                   ok(ltx_predictor_save(p, saved.c_str()), "save model");
        }
        const auto out_csv = (fs::path(out_dir) / "explanations.csv").string();
        good = good && ok(ltx_explain_dataset(p, ds, ds, samples, cap, explain_seed, explain_threads, out_csv.c_str()),
                          "explain");
        ltx_predictor_free(p);
        ltx_dataset_free(ds);
        if (!good) return 1;
        if (verbosity > 0) std::cerr << "wrote " << out_csv << "\n";
        return 0;
    }

    if (calibrate->parsed()) {
        if (!match_train && !rate) {
            std::cerr << "ltx calibrate: one of --rate or --match-train is required\n";
            return 2;
        }
        if (!ensure_dir(out_dir)) return 1;
        const auto model = (fs::path(out_dir) / "rejector.json").string();
        double tau = 0.0;
        const auto strategy = match_train ? LTX_MATCH_TRAIN_LOW_QUALITY : LTX_TARGET_RATE;
        if (!ok(ltx_calibrate(kind.c_str(), train_csv.c_str(), val_csv.c_str(), params.c_str(), strategy,
                              rate.value_or(0.0), model.c_str(), &tau),
                "calibrate"))
            return 1;
        char tau_text[40] = "null";
        if (std::isfinite(tau)) std::snprintf(tau_text, sizeof tau_text, "%.17g", tau);
        std::printf("{\"rejector\":\"%s\",\"threshold\":%s,\"model\":\"%s\"}\n", json_escape(kind).c_str(), tau_text,
                    json_escape(model).c_str());
        return 0;
    }
    return 0;
}

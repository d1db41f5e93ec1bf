#pragma once

#include "ltx/common.hpp"
#include "ltx/data.hpp"
#include "ltx/explain.hpp"
#include "ltx/feedback.hpp"
#include "ltx/models.hpp"
#include "ltx/reject.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ltx::bench {

using feedback::JudgedExplanation;
using reject::Context;
using reject::RejectorKind;
using reject::RejectorParams;

/// Probability that a random high-quality item (label 1) outscores a random
/// low-quality one, ties counting one half. Empty when a class is absent.
std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels);

/// round(rate * n), halves rounded up.
std::size_t rejection_count(std::size_t n, double rate);

struct Composition {
    double pct_low_accepted = 0.0;
    double pct_low_rejected = 0.0;
    std::size_t n_accepted = 0;
    std::size_t n_rejected = 0;
    std::size_t low_accepted = 0;
    std::size_t low_rejected = 0;
};

/// Rejects the rejection_count(n, rate) lowest scores (stable on ties) and
/// reports the share of label-0 items on each side (0 for an empty side).
Composition set_composition(std::span<const double> scores, std::span<const int> labels, double rate);

struct PairedT {
    double mean_difference = 0.0;
    double t = 0.0;
    std::size_t df = 0;
};

/// Paired t statistic of a - b (t is +-inf when all differences are equal and nonzero).
PairedT paired_t(std::span<const double> a, std::span<const double> b);

/// Hyperparameter values searched for one rejector kind. Empty lists are
/// not searched (the base value applies).
struct Grid {
    std::vector<svm::KernelType> kernels;
    std::vector<double> C;
    std::vector<std::size_t> k;
    std::vector<double> epsilon0;
    std::vector<std::size_t> k_nn;
    std::vector<double> l2;
};

Grid default_grid(RejectorKind kind);

/// Cartesian product in the order kernel, C, k, epsilon0 (then k_nn, l2).
std::vector<RejectorParams> expand_grid(const RejectorParams& base, const Grid& grid);

struct Labeled {
    std::vector<JudgedExplanation> judged;
    std::vector<Context> contexts;

    std::size_t size() const { return judged.size(); }
    std::vector<int> labels() const;
    std::vector<explain::Explanation> explanations() const;
    Labeled subset(std::span<const std::size_t> rows) const;
};

struct GridResult {
    reject::Rejector rejector;
    std::size_t index = 0;
    std::optional<double> val_auroc;
};

/// Fits every candidate on train and keeps the best validation AUROC
/// (first candidate wins ties; a missing AUROC ranks last).
GridResult grid_search(const std::vector<RejectorParams>& candidates, const Labeled& train, const Labeled& val);

struct CsvSource {
    std::filesystem::path path;
    std::string target = "y";
    Task task = Task::Classification;
};

/// Where the judged explanations of a dataset come from: a synthetic or CSV
/// dataset run through the predictor/oracle simulation, or a judged
/// explanation file produced from human annotations.
struct DatasetSource {
    std::string id;
    std::optional<data::SyntheticSpec> synthetic;
    std::optional<CsvSource> csv;
    std::optional<std::filesystem::path> annotations;

    bool simulated() const { return !annotations.has_value(); }
};

struct ExperimentConfig {
    int schema_version = 1;
    std::vector<DatasetSource> datasets;
    double predictor_l2 = 1.0;
    double oracle_l2 = 1.0;
    std::optional<double> oracle_bandwidth;
    /// Share of each dataset used to train f and O; the rest is judged.
    double predictor_fraction = 0.5;
    explain::ExplainerConfig explainer;
    feedback::JudgmentConfig judgment;
    std::size_t stability_runs = 10;
    std::size_t faithfulness_perturbations = 25;
    std::size_t bootstrap_members = 10;
    std::vector<RejectorKind> rejectors;
    std::map<RejectorKind, Grid> grids;
    bool sigma_as_variance = true;
    double svm_tolerance = 1e-3;
    std::size_t repeats = 10;
    std::vector<double> rejection_rates;
    std::uint64_t master_seed = 0;
    std::size_t threads = 1;

    const Grid& grid(RejectorKind kind) const;
};

/// Parses and validates a config document; errors carry JSON-pointer paths.
/// Relative paths resolve against base_dir.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical form with every default filled in.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// FNV-1a of the canonical form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

std::vector<double> default_rejection_rates();

struct PreparedDataset {
    std::string id;
    Task task = Task::Classification;
    Labeled items;
    std::uint64_t seed = 0;
    /// Balanced accuracy (classification) or MSE (regression) on the judged set.
    std::optional<double> predictor_score;
    std::optional<double> oracle_score;
};

using Logger = std::function<void(const std::string&)>;

/// Trains f and O, explains and judges the held-out part, and precomputes the
/// side information the requested rejectors need.
PreparedDataset prepare_dataset(const DatasetSource& src, const ExperimentConfig& cfg, const Logger& log = {});

struct ResultRecord {
    std::string dataset;
    RejectorKind kind = RejectorKind::Uler;
    std::size_t repeat = 0;
    std::uint64_t seed = 0;
    double rate = 0.0;
    std::optional<double> auroc;
    Composition composition;
    std::string hyperparameters;
};

struct RunOutcome {
    std::string dataset;
    RejectorKind kind = RejectorKind::Uler;
    std::size_t repeat = 0;
    std::uint64_t seed = 0;
    std::optional<double> auroc;
    std::optional<double> val_auroc;
    std::string hyperparameters;
};

struct DatasetSummary {
    std::string id;
    Task task = Task::Classification;
    std::size_t n_judged = 0;
    double low_quality_fraction = 0.0;
    std::optional<double> predictor_score;
    std::optional<double> oracle_score;
};

struct ExperimentResult {
    std::vector<ResultRecord> records;
    std::vector<RunOutcome> runs;
    std::vector<DatasetSummary> datasets;
};

/// Runs one (repeat, rejector) unit on a prepared dataset.
std::vector<ResultRecord> run_unit(const PreparedDataset& ds, const ExperimentConfig& cfg, std::size_t repeat,
                                   RejectorKind kind, RunOutcome* outcome = nullptr);

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Logger& log = {});

/// "# ltx <version> config_hash=<hash> master_seed=<seed>"
std::string provenance_line(const ExperimentConfig& cfg);

void write_results_csv(std::ostream& out, const ExperimentResult& result, const ExperimentConfig& cfg);
void write_curves_csv(std::ostream& out, const ExperimentResult& result, const ExperimentConfig& cfg);
nlohmann::json summary_json(const ExperimentResult& result, const ExperimentConfig& cfg);

/// Writes results.csv, curves.csv and summary.json into dir (created if needed).
void write_outputs(const std::filesystem::path& dir, const ExperimentResult& result, const ExperimentConfig& cfg);

/// Runs fn(0..n-1) on up to `threads` workers. The lowest failing index's
/// exception is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace ltx::bench

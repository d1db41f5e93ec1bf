#pragma once

#include "ltx/common.hpp"
#include "ltx/feedback.hpp"
#include "ltx/svm.hpp"

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <string>
#include <vector>

namespace ltx::reject {

using explain::Explanation;
using feedback::JudgedExplanation;

struct AugmentationConfig {
    std::size_t k = 10;
    double epsilon0 = 0.5;
    std::uint64_t seed = 0;
    /// true: per-feature variance epsilon0 * s_i * sigma_i.
    /// false: per-feature standard deviation epsilon0 * s_i * sigma_i.
    bool sigma_as_variance = true;

    void validate() const;
};

/// Per-feature population standard deviation of the relevance vectors.
std::vector<double> relevance_std(const std::vector<JudgedExplanation>& judged);

/// Perturbation mask: for a low-quality explanation the correct entries move,
/// for a high-quality one the wrong entries move.
std::vector<char> augmentation_mask(const JudgedExplanation& j);

/// k label-preserving copies of j. Entries outside the mask are copied exactly.
std::vector<JudgedExplanation> augment(const JudgedExplanation& j, std::span<const double> sigma,
                                       const AugmentationConfig& cfg);

enum class RejectorKind {
    Uler,
    UlerZX,
    UlerZY,
    UlerZXY,
    UlerNoAug,
    RandRej,
    NovRejX,
    NovRejZ,
    PredAmb,
    StabRej,
    FaithRej,
    ComplRej,
    PastaRejLite,
};

const char* to_string(RejectorKind kind);
RejectorKind rejector_kind_from_string(const std::string& name);
const std::vector<RejectorKind>& all_rejector_kinds();
/// Comma-separated list of all kind names, for error messages.
std::string rejector_kind_names();

bool is_uler(RejectorKind kind);
/// Kinds that need nothing beyond the explanation itself.
bool uses_explanation_only(RejectorKind kind);

enum class InputSpace { Z, ZX, ZY, ZXY };
InputSpace input_space(RejectorKind kind);

/// Side information about the instance behind an explanation. Which fields a
/// rejector needs depends on its kind; a missing one is an error.
struct Context {
    std::optional<Vector> instance;
    /// P(Y=1 | x) for classifiers, E[Y | x] for regressors.
    std::optional<double> prediction;
    std::optional<double> predictive_variance;
    std::optional<double> stability;
    std::optional<double> faithfulness;
    /// Stable identity used by RandRej.
    std::uint64_t key = 0;
};

struct RejectorParams {
    RejectorKind kind = RejectorKind::Uler;
    Task task = Task::Classification;
    AugmentationConfig augmentation;
    svm::KernelSvmConfig svm;
    std::size_t k_nn = 1;
    double l2 = 1.0;
    std::uint64_t seed = 0;

    /// Compact "name=value;..." rendering of the tuned hyperparameters.
    std::string describe() const;
};

void to_json(nlohmann::json& j, const RejectorParams& p);
void from_json(const nlohmann::json& j, RejectorParams& p);

struct CalibrationStrategy {
    enum class Kind { TargetRate, MatchTrainLowQualityFraction } kind = Kind::TargetRate;
    double rate = 0.1;

    static CalibrationStrategy target_rate(double rho) { return {Kind::TargetRate, rho}; }
    static CalibrationStrategy match_low_quality_fraction(double gamma) {
        return {Kind::MatchTrainLowQualityFraction, gamma};
    }
};

/// Threshold rejecting the round(rate * n) lowest validation scores under the
/// strict rule score < tau; +infinity when everything is rejected.
double calibrate_threshold(std::span<const double> val_scores, double rate);
double calibrate_threshold(std::span<const double> val_scores, const CalibrationStrategy& strategy);

/// Fraction of label-0 explanations.
double low_quality_fraction(const std::vector<JudgedExplanation>& judged);

struct Decision {
    bool rejected = false;
    double score = 0.0;
    std::optional<double> prediction;
};

/// A fitted scoring function over explanations; higher scores mean better
/// explanations.
class Rejector {
public:
    Rejector() = default;

    /// `svm_start` warm-starts the SVM of a ULER kind with a feasible alpha
    /// for the training problem these params produce.
    static Rejector fit(const RejectorParams& params, const std::vector<JudgedExplanation>& train,
                        const std::vector<Context>& contexts, std::span<const double> svm_start = {});

    double score(const Explanation& z, const Context& ctx) const;
    std::vector<double> score_batch(const std::vector<Explanation>& zs, const std::vector<Context>& contexts) const;

    void calibrate(std::span<const double> val_scores, const CalibrationStrategy& strategy);
    void set_threshold(double tau) { threshold_ = tau; }
    bool calibrated() const { return threshold_.has_value(); }
    double threshold() const;

    /// Rejects iff score < threshold.
    Decision decide(const Explanation& z, const Context& ctx) const;

    const RejectorParams& params() const { return params_; }
    RejectorKind kind() const { return params_.kind; }
    const std::optional<svm::KernelSvm>& svm_model() const { return svm_; }

    friend void to_json(nlohmann::json& j, const Rejector& r);
    friend void from_json(const nlohmann::json& j, Rejector& r);

private:
    RejectorParams params_;
    std::optional<svm::KernelSvm> svm_;
    Matrix reference_;  // NovRej reference set
    models::Predictor linear_;  // PastaRejLite
    std::optional<data::Scaler> scaler_;
    std::optional<double> threshold_;
    std::optional<CalibrationStrategy> strategy_;
};

/// ULER input row: z followed by the side inputs of the input space.
std::vector<double> uler_features(const Explanation& z, const Context& ctx, InputSpace space);

/// Distance to the k-th nearest reference row (k >= 1, clamped to the set size).
double kth_neighbor_distance(const Matrix& reference, std::span<const double> query, std::size_t k);

}  // namespace ltx::reject

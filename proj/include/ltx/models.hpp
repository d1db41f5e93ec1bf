#pragma once

#include "ltx/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <string>
#include <vector>

namespace ltx::models {

enum class PredictorKind { LinearRegression, LogisticRegression, KernelRidge, KernelLogistic };

const char* to_string(PredictorKind kind);
PredictorKind predictor_kind_from_string(const std::string& name);
bool is_classifier(PredictorKind kind);
bool is_kernel(PredictorKind kind);

struct PredictorParams {
    PredictorKind kind = PredictorKind::LogisticRegression;
    double l2 = 1.0;
    /// RBF length scale; empty selects the median pairwise distance.
    std::optional<double> bandwidth;
};

void to_json(nlohmann::json& j, const PredictorParams& p);
void from_json(const nlohmann::json& j, PredictorParams& p);

/// A fitted predictor. Classifiers output P(Y=1 | x); regressors output E[Y | x].
///
/// Linear kinds store `weights` (one per feature). Kernel kinds store dual
/// coefficients in `weights` and the training rows in `support`:
///     f(x) = intercept + sum_j weights_j * exp(-|x - support_j|^2 / (2 bandwidth^2))
/// passed through the logistic link for KernelLogistic.
class Predictor {
public:
    Predictor() = default;
    Predictor(PredictorKind kind, double l2, double bandwidth, Vector weights, double intercept, Matrix support);

    PredictorKind kind() const { return kind_; }
    bool is_classifier() const { return models::is_classifier(kind_); }
    std::size_t dim() const { return dim_; }
    double l2() const { return l2_; }
    double bandwidth() const { return bandwidth_; }
    const Vector& weights() const { return weights_; }
    double intercept() const { return intercept_; }
    const Matrix& support() const { return support_; }

    /// Pre-link score (linear predictor / kernel expansion).
    double raw(std::span<const double> x) const;
    double predict(std::span<const double> x) const;
    /// Row-wise predict; `out` is resized.
    void predict_batch(const Matrix& rows, Vector& out) const;

private:
    void raw_batch(const Matrix& rows, Vector& out) const;

    PredictorKind kind_ = PredictorKind::LinearRegression;
    double l2_ = 0.0;
    double bandwidth_ = 0.0;
    Vector weights_;
    double intercept_ = 0.0;
    Matrix support_;
    Vector support_sq_norms_;
    std::size_t dim_ = 0;
};

void to_json(nlohmann::json& j, const Predictor& p);
void from_json(const nlohmann::json& j, Predictor& p);

Predictor fit(const PredictorParams& params, const Matrix& X, const Vector& y, std::uint64_t seed = 0);

/// Median pairwise Euclidean distance over (at most 1000 sampled) rows.
double median_pairwise_distance(const Matrix& X, std::uint64_t seed);

/// Squared-exponential kernel matrix between two row sets.
Matrix rbf_kernel(const Matrix& A, const Matrix& B, double bandwidth);

class BootstrapEnsemble {
public:
    BootstrapEnsemble() = default;
    explicit BootstrapEnsemble(std::vector<Predictor> members);

    static BootstrapEnsemble fit(const PredictorParams& params, const Matrix& X, const Vector& y,
                                 std::size_t members, std::uint64_t seed);

    const std::vector<Predictor>& members() const { return members_; }
    /// Population variance of member predictions at x.
    double predictive_variance(std::span<const double> x) const;

private:
    std::vector<Predictor> members_;
};

inline double sigmoid(double t) {
    return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

}  // namespace ltx::models

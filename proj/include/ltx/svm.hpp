#pragma once

#include "ltx/common.hpp"
#include "ltx/data.hpp"

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <string>
#include <vector>

namespace ltx::svm {

enum class KernelType { Linear, Polynomial, Rbf };

const char* to_string(KernelType k);
KernelType kernel_from_string(const std::string& name);

struct KernelSvmConfig {
    KernelType kernel = KernelType::Rbf;
    double C = 1.0;
    /// RBF length scale on standardized inputs; empty means sqrt(d / 2),
    /// i.e. exp(-|a-b|^2 / d).
    std::optional<double> bandwidth;
    int degree = 3;
    double coef0 = 1.0;  // polynomial: (a.b / d + coef0)^degree
    double tolerance = 1e-3;
    std::size_t max_iterations = 0;  // 0: max(10^6, 100 n)
    std::size_t cache_bytes = std::size_t{1} << 30;
    bool standardize = true;
};

void to_json(nlohmann::json& j, const KernelSvmConfig& c);
void from_json(const nlohmann::json& j, KernelSvmConfig& c);

struct TrainingStats {
    std::size_t iterations = 0;
    bool converged = false;
    double max_violation = 0.0;  // m(alpha) - M(alpha) at exit
};

/// Soft-margin C-SVC solved in the dual by SMO with second-order working-set
/// selection. decision(x) > 0 predicts the +1 class.
class KernelSvm {
public:
    KernelSvm() = default;

    /// labels must be +1/-1 and contain both classes. A nonempty `start` is a
    /// feasible alpha (0 <= alpha <= C, sum y * alpha = 0) to begin SMO from.
    static KernelSvm fit(const Matrix& X, std::span<const int> labels, const KernelSvmConfig& cfg,
                         std::span<const double> start = {});

    double decision(std::span<const double> x) const;
    void decision_batch(const Matrix& X, Vector& out) const;

    const KernelSvmConfig& config() const { return cfg_; }
    const TrainingStats& stats() const { return stats_; }
    /// y_i * alpha_i for the support vectors.
    const Vector& dual_coefficients() const { return coef_; }
    const Matrix& support_vectors() const { return support_; }
    double bias() const { return bias_; }
    /// Full alpha vector of the training problem (for KKT checks).
    const Vector& alphas() const { return alphas_; }

    friend void to_json(nlohmann::json& j, const KernelSvm& m);
    friend void from_json(const nlohmann::json& j, KernelSvm& m);

private:
    double kernel(std::span<const double> a, std::span<const double> b) const;

    KernelSvmConfig cfg_;
    double bandwidth_ = 1.0;
    std::optional<data::Scaler> scaler_;
    Matrix support_;
    Vector coef_;
    Vector alphas_;
    double bias_ = 0.0;
    TrainingStats stats_;
};

}  // namespace ltx::svm

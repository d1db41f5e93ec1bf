#pragma once

#include "ltx/common.hpp"
#include "ltx/explain.hpp"

namespace ltx::quality {

using explain::BatchModel;
using explain::Explanation;
using explain::ExplainerConfig;

struct FaithfulnessConfig {
    std::size_t n_perturbations = 25;
    /// |z_i| <= tolerance counts as irrelevant.
    double relevance_tolerance = 1e-12;
    std::uint64_t seed = 0;
};

struct FaithfulnessReport {
    double sufficiency_raw = 0.0;  // mean |change| when perturbing irrelevant features
    double necessity_raw = 0.0;    // mean |change| when perturbing relevant features
    double sufficiency = 1.0;      // exp(-sufficiency_raw)
    double necessity = 0.0;        // 1 - exp(-necessity_raw)
    double faithfulness = 0.0;     // harmonic mean of the two normalized terms
};

/// Mean Pearson correlation between z and `runs` fresh KernelSHAP explanations.
double stability(const BatchModel& f, std::span<const double> x, const Explanation& z, const Matrix& background,
                 const ExplainerConfig& cfg, std::size_t runs = 10);
double stability(const Explanation& z, const std::vector<Explanation>& reruns);

FaithfulnessReport faithfulness_report(const BatchModel& f, std::span<const double> x, const Explanation& z,
                                       const Matrix& background, const FaithfulnessConfig& cfg = {});
double faithfulness(const BatchModel& f, std::span<const double> x, const Explanation& z, const Matrix& background,
                    const FaithfulnessConfig& cfg = {});
/// Normalization and combination of raw sufficiency/necessity.
FaithfulnessReport faithfulness_from_raw(double sufficiency_raw, double necessity_raw);

double harmonic_mean(double a, double b);

/// Entropy of |z_i| / sum_j |z_j|; ln d for the all-zero explanation.
double complexity(const Explanation& z);
double complexity(std::span<const double> relevance);

}  // namespace ltx::quality

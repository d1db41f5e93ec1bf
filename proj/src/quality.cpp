#include "ltx/quality.hpp"

#include "ltx/feedback.hpp"

#include <algorithm>
#include <cmath>

namespace ltx::quality {

double stability(const Explanation& z, const std::vector<Explanation>& reruns) {
    require(!reruns.empty(), "stability needs at least one re-run");
    double acc = 0.0;
    for (const auto& r : reruns) acc += feedback::pearson(z.relevance, r.relevance);
    return acc / static_cast<double>(reruns.size());
}

double stability(const BatchModel& f, std::span<const double> x, const Explanation& z, const Matrix& background,
                 const ExplainerConfig& cfg, std::size_t runs) {
    return stability(z, explain::rerun_explanations(f, x, background, cfg, runs));
}

double harmonic_mean(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

FaithfulnessReport faithfulness_from_raw(double sufficiency_raw, double necessity_raw) {
    FaithfulnessReport r;
    r.sufficiency_raw = sufficiency_raw;
    r.necessity_raw = necessity_raw;
    r.sufficiency = std::exp(-sufficiency_raw);
    r.necessity = 1.0 - std::exp(-necessity_raw);
    r.faithfulness = harmonic_mean(r.sufficiency, r.necessity);
    return r;
}

namespace {

// Mean |f(x) - f(x')| where x' resamples the chosen features independently
// from background rows and keeps the others at x.
double mean_change(const BatchModel& f, std::span<const double> x, const IndexList& perturbed, const Matrix& background,
                   std::size_t samples, Rng& rng) {
    if (perturbed.empty()) return 0.0;
    const auto d = static_cast<Eigen::Index>(x.size());
    Matrix rows(static_cast<Eigen::Index>(samples) + 1, d);
    rows.row(0) = as_vector(x).transpose();
    for (Eigen::Index s = 1; s <= static_cast<Eigen::Index>(samples); ++s) {
        rows.row(s) = rows.row(0);
        for (auto j : perturbed) {
            const auto b = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(background.rows()));
            rows(s, static_cast<Eigen::Index>(j)) = background(b, static_cast<Eigen::Index>(j));
        }
    }
    Vector out;
    f(rows, out);
    return (out.tail(static_cast<Eigen::Index>(samples)).array() - out[0]).abs().mean();
}

}  // namespace

FaithfulnessReport faithfulness_report(const BatchModel& f, std::span<const double> x, const Explanation& z,
                                       const Matrix& background, const FaithfulnessConfig& cfg) {
    require(background.rows() > 0, "faithfulness needs a nonempty background");
    require(cfg.n_perturbations >= 1, "n_perturbations must be >= 1");
    require(z.dim() == x.size() && static_cast<std::size_t>(background.cols()) == x.size(),
            "faithfulness: dimension mismatch");
    IndexList relevant, irrelevant;
    for (std::size_t i = 0; i < z.dim(); ++i)
        (std::abs(z.relevance[static_cast<Eigen::Index>(i)]) > cfg.relevance_tolerance ? relevant : irrelevant).push_back(i);
    Rng rng(derive_seed({cfg.seed, 0xfa17}));
    const double suf = mean_change(f, x, irrelevant, background, cfg.n_perturbations, rng);
    const double nec = mean_change(f, x, relevant, background, cfg.n_perturbations, rng);
    return faithfulness_from_raw(suf, nec);
}

double faithfulness(const BatchModel& f, std::span<const double> x, const Explanation& z, const Matrix& background,
                    const FaithfulnessConfig& cfg) {
    return faithfulness_report(f, x, z, background, cfg).faithfulness;
}

double complexity(std::span<const double> relevance) {
    require(!relevance.empty(), "complexity needs d >= 1");
    double total = 0.0;
    for (double v : relevance) total += std::abs(v);
    if (total == 0.0) return std::log(static_cast<double>(relevance.size()));
    double h = 0.0;
    for (double v : relevance) {
        const double p = std::abs(v) / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::clamp(h, 0.0, std::log(static_cast<double>(relevance.size())));
}

double complexity(const Explanation& z) { return complexity(as_span(z.relevance)); }

}  // namespace ltx::quality

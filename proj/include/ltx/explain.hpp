#pragma once

#include "ltx/common.hpp"
#include "ltx/models.hpp"

#include <nlohmann/json_fwd.hpp>

#include <functional>
#include <string>
#include <vector>

namespace ltx::explain {

/// Signed per-feature contributions to one model output, in output units.
struct Explanation {
    Vector relevance;
    double base_value = 0.0;
    std::string instance_id;

    std::size_t dim() const { return static_cast<std::size_t>(relevance.size()); }
};

void to_json(nlohmann::json& j, const Explanation& e);
void from_json(const nlohmann::json& j, Explanation& e);

/// Evaluates a model on every row of the input; `out` is resized by the callee.
using BatchModel = std::function<void(const Matrix& rows, Vector& out)>;

BatchModel as_batch_model(const models::Predictor& p);

struct ExplainerConfig {
    /// Interior coalitions to evaluate. The empty and full coalitions are
    /// always evaluated on top of this budget.
    std::size_t n_samples = 100;
    std::size_t background_cap = 100;
    std::uint64_t seed = 0;
};

/// Picks at most `cap` rows of `source` (seeded, order preserved when no cap applies).
Matrix make_background(const Matrix& source, std::size_t cap, std::uint64_t seed);

/// Any local attribution method: model + instance + seed -> explanation.
class Explainer {
public:
    virtual ~Explainer() = default;
    virtual Explanation explain(const BatchModel& f, std::span<const double> x, std::uint64_t seed) const = 0;
};

/// Masked-feature value function: features outside the coalition take the
/// values of each background row in turn and the model output is averaged.
class KernelShap final : public Explainer {
public:
    KernelShap(Matrix background, ExplainerConfig cfg);

    Explanation explain(const BatchModel& f, std::span<const double> x, std::uint64_t seed) const override;
    Explanation explain(const BatchModel& f, std::span<const double> x) const { return explain(f, x, cfg_.seed); }

    const Matrix& background() const { return background_; }
    const ExplainerConfig& config() const { return cfg_; }

private:
    Matrix background_;
    ExplainerConfig cfg_;
};

/// Background rows are used as given (apply make_background first to cap them).
Explanation kernel_shap(const BatchModel& f, std::span<const double> x, const Matrix& background,
                        const ExplainerConfig& cfg);
Explanation kernel_shap(const models::Predictor& f, std::span<const double> x, const Matrix& background,
                        const ExplainerConfig& cfg);

/// Shapley values by enumerating all 2^d coalitions (d <= 12).
Explanation exact_shapley(const BatchModel& f, std::span<const double> x, const Matrix& background);
Explanation exact_shapley(const models::Predictor& f, std::span<const double> x, const Matrix& background);

/// `runs` explanations with seeds cfg.seed + r.
std::vector<Explanation> rerun_explanations(const BatchModel& f, std::span<const double> x, const Matrix& background,
                                            const ExplainerConfig& cfg, std::size_t runs);

/// One weighted coalition of the KernelSHAP design (exposed for tests).
struct Coalition {
    std::vector<char> members;
    double weight = 0.0;
};

std::vector<Coalition> sample_coalitions(std::size_t d, std::size_t n_samples, std::uint64_t seed);

double shapley_kernel_weight(std::size_t d, std::size_t size);

}  // namespace ltx::explain

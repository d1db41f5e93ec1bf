#include "ltx/explain.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace ltx::explain {

void to_json(nlohmann::json& j, const Explanation& e) {
    j = {{"instance_id", e.instance_id},
         {"base_value", e.base_value},
         {"relevance", std::vector<double>(e.relevance.begin(), e.relevance.end())}};
}

void from_json(const nlohmann::json& j, Explanation& e) {
    e.instance_id = j.at("instance_id").get<std::string>();
    e.base_value = j.at("base_value").get<double>();
    auto r = j.at("relevance").get<std::vector<double>>();
    e.relevance = Eigen::Map<Vector>(r.data(), static_cast<Eigen::Index>(r.size()));
}

BatchModel as_batch_model(const models::Predictor& p) {
    return [&p](const Matrix& rows, Vector& out) { p.predict_batch(rows, out); };
}

Matrix make_background(const Matrix& source, std::size_t cap, std::uint64_t seed) {
    require(source.rows() > 0, "background source is empty");
    if (cap == 0 || static_cast<std::size_t>(source.rows()) <= cap) return source;
    Rng rng(derive_seed({seed, 0xbac6}));
    IndexList rows = permutation(static_cast<std::size_t>(source.rows()), rng);
    rows.resize(cap);
    std::sort(rows.begin(), rows.end());
    return select_rows(source, rows);
}

namespace {

double binomial(std::size_t n, std::size_t k) {
    double r = 1.0;
    for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return std::round(r);
}

// v(S) for a batch of coalitions. Rows are packed in chunks so the scratch
// matrix stays small regardless of background size.
std::vector<double> coalition_values(const BatchModel& f, std::span<const double> x, const Matrix& background,
                                     const std::vector<const std::vector<char>*>& masks) {
    const auto nb = background.rows();
    const auto d = background.cols();
    const std::size_t per_chunk = std::max<std::size_t>(1, 8192 / static_cast<std::size_t>(nb));
    std::vector<double> values(masks.size(), 0.0);
    Matrix rows;
    Vector out;
    for (std::size_t start = 0; start < masks.size(); start += per_chunk) {
        const std::size_t len = std::min(per_chunk, masks.size() - start);
        rows.resize(static_cast<Eigen::Index>(len) * nb, d);
        for (std::size_t c = 0; c < len; ++c) {
            const auto& m = *masks[start + c];
            auto block = rows.middleRows(static_cast<Eigen::Index>(c) * nb, nb);
            block = background;
            for (Eigen::Index j = 0; j < d; ++j)
                if (m[static_cast<std::size_t>(j)]) block.col(j).setConstant(x[static_cast<std::size_t>(j)]);
        }
        f(rows, out);
        require(out.size() == rows.rows(), "model returned the wrong number of outputs");
        for (std::size_t c = 0; c < len; ++c)
            values[start + c] = out.segment(static_cast<Eigen::Index>(c) * nb, nb).mean();
    }
    return values;
}

void check_call(std::span<const double> x, const Matrix& background) {
    require(background.rows() > 0, "empty background");
    require(static_cast<std::size_t>(background.cols()) == x.size(), "background and instance dimensions differ");
}

}  // namespace

double shapley_kernel_weight(std::size_t d, std::size_t size) {
    require(size > 0 && size < d, "Shapley kernel weight is defined for interior coalitions");
    return static_cast<double>(d - 1) /
           (binomial(d, size) * static_cast<double>(size) * static_cast<double>(d - size));
}

std::vector<Coalition> sample_coalitions(std::size_t d, std::size_t n_samples, std::uint64_t seed) {
    require(d >= 2, "KernelSHAP needs at least two features");
    require(d <= 62, "KernelSHAP supports at most 62 features");
    std::vector<Coalition> out;
    const double interior = std::ldexp(1.0, static_cast<int>(d)) - 2.0;

    if (static_cast<double>(n_samples) >= interior) {
        const std::uint64_t total = (std::uint64_t{1} << d) - 1;
        for (std::uint64_t bits = 1; bits < total; ++bits) {
            Coalition c;
            c.members.resize(d);
            std::size_t size = 0;
            for (std::size_t j = 0; j < d; ++j) size += (c.members[j] = static_cast<char>((bits >> j) & 1U));
            c.weight = shapley_kernel_weight(d, size);
            out.push_back(std::move(c));
        }
        return out;
    }

    // Size s and d-s are handled together. Sizes are taken whole in order of
    // decreasing kernel mass while the budget allows; the rest is sampled.
    const std::size_t n_sizes = (d - 1 + 1) / 2;  // ceil((d-1)/2)
    const std::size_t n_paired = (d - 1) / 2;
    std::vector<double> size_mass(n_sizes);
    for (std::size_t s = 1; s <= n_sizes; ++s) {
        size_mass[s - 1] = static_cast<double>(d - 1) / (static_cast<double>(s) * static_cast<double>(d - s));
        if (s <= n_paired) size_mass[s - 1] *= 2.0;
    }
    const double mass_total = std::accumulate(size_mass.begin(), size_mass.end(), 0.0);
    for (auto& m : size_mass) m /= mass_total;

    std::vector<double> remaining = size_mass;
    std::size_t samples_left = n_samples;
    std::size_t full_sizes = 0;
    for (std::size_t s = 1; s <= n_sizes; ++s) {
        const double count = binomial(d, s) * (s <= n_paired ? 2.0 : 1.0);
        const double rem_total = std::accumulate(remaining.begin() + static_cast<std::ptrdiff_t>(s - 1), remaining.end(), 0.0);
        const double share = remaining[s - 1] / rem_total;
        if (static_cast<double>(samples_left) * share / count < 1.0 - 1e-8) break;
        ++full_sizes;
        samples_left -= static_cast<std::size_t>(count);
        double w = size_mass[s - 1] / binomial(d, s);
        if (s <= n_paired) w /= 2.0;
        // Enumerate all size-s subsets in lexicographic order.
        std::vector<std::size_t> pick(s);
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        while (true) {
            Coalition c;
            c.members.assign(d, 0);
            for (auto j : pick) c.members[j] = 1;
            c.weight = w;
            if (s <= n_paired) {
                Coalition comp = c;
                for (auto& m : comp.members) m = static_cast<char>(1 - m);
                out.push_back(std::move(c));
                out.push_back(std::move(comp));
            } else {
                out.push_back(std::move(c));
            }
            std::size_t i = s;
            while (i > 0 && pick[i - 1] == d - s + i - 1) --i;
            if (i == 0) break;
            ++pick[i - 1];
            for (std::size_t k = i; k < s; ++k) pick[k] = pick[k - 1] + 1;
        }
        remaining[s - 1] = 0.0;
    }

    if (full_sizes == n_sizes || samples_left == 0) return out;

    double weight_left = 0.0;
    for (std::size_t s = full_sizes; s < n_sizes; ++s) weight_left += size_mass[s];
    std::vector<double> draw_weights(remaining.begin() + static_cast<std::ptrdiff_t>(full_sizes), remaining.end());
    std::discrete_distribution<std::size_t> size_dist(draw_weights.begin(), draw_weights.end());
    Rng rng(derive_seed({seed, 0xc0a1}));

    const std::size_t fixed = out.size();
    std::map<std::vector<char>, std::size_t> seen;
    const std::size_t max_draws = 4 * samples_left;
    for (std::size_t draw = 0; draw < max_draws && samples_left > 0; ++draw) {
        const std::size_t s = full_sizes + 1 + size_dist(rng);
        IndexList perm = permutation(d, rng);
        std::vector<char> members(d, 0);
        for (std::size_t k = 0; k < s; ++k) members[perm[k]] = 1;
        auto add = [&](std::vector<char> m) {
            auto [it, inserted] = seen.try_emplace(m, out.size());
            if (inserted) {
                out.push_back({std::move(m), 1.0});
                --samples_left;
            } else {
                out[it->second].weight += 1.0;
            }
        };
        add(members);
        if (s <= n_paired && samples_left > 0) {
            for (auto& m : members) m = static_cast<char>(1 - m);
            add(std::move(members));
        }
    }
    double sampled = 0.0;
    for (std::size_t i = fixed; i < out.size(); ++i) sampled += out[i].weight;
    for (std::size_t i = fixed; i < out.size(); ++i) out[i].weight *= weight_left / sampled;
    return out;
}

Explanation kernel_shap(const BatchModel& f, std::span<const double> x, const Matrix& background,
                        const ExplainerConfig& cfg) {
    check_call(x, background);
    const std::size_t d = x.size();
    require(d >= 2, "KernelSHAP needs at least two features");
    const std::size_t interior = d < 63 ? (std::size_t{1} << d) - 2 : std::numeric_limits<std::size_t>::max();
    const std::size_t needed = std::min(2 * d, interior);
    require(cfg.n_samples >= needed, "n_samples must be at least " + std::to_string(needed));

    const auto coalitions = sample_coalitions(d, cfg.n_samples, cfg.seed);
    const std::vector<char> empty(d, 0), full(d, 1);
    std::vector<const std::vector<char>*> masks{&empty, &full};
    for (const auto& c : coalitions) masks.push_back(&c.members);
    const auto values = coalition_values(f, x, background, masks);
    const double base = values[0];
    const double fx = values[1];

    // Eliminate the last feature through the efficiency constraint
    // sum_i z_i = f(x) - base, then solve weighted least squares.
    const auto m = static_cast<Eigen::Index>(coalitions.size());
    const auto p = static_cast<Eigen::Index>(d - 1);
    Eigen::MatrixXd A(m, p);
    Vector b(m), w(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        const auto& mem = coalitions[static_cast<std::size_t>(r)].members;
        const double last = mem[d - 1];
        for (Eigen::Index j = 0; j < p; ++j) A(r, j) = mem[static_cast<std::size_t>(j)] - last;
        b[r] = values[static_cast<std::size_t>(r) + 2] - base - last * (fx - base);
        w[r] = coalitions[static_cast<std::size_t>(r)].weight;
    }
    const Eigen::MatrixXd normal = A.transpose() * w.asDiagonal() * A;
    const Vector rhs = A.transpose() * w.cwiseProduct(b);
    Vector phi = normal.completeOrthogonalDecomposition().solve(rhs);

    Explanation e;
    e.base_value = base;
    e.relevance.resize(static_cast<Eigen::Index>(d));
    e.relevance.head(p) = phi;
    e.relevance[p] = (fx - base) - phi.sum();
    return e;
}

Explanation kernel_shap(const models::Predictor& f, std::span<const double> x, const Matrix& background,
                        const ExplainerConfig& cfg) {
    return kernel_shap(as_batch_model(f), x, background, cfg);
}

Explanation exact_shapley(const BatchModel& f, std::span<const double> x, const Matrix& background) {
    check_call(x, background);
    const std::size_t d = x.size();
    require(d >= 1 && d <= 12, "exact Shapley enumeration supports 1 <= d <= 12");
    const std::size_t total = std::size_t{1} << d;
    std::vector<std::vector<char>> all(total, std::vector<char>(d, 0));
    std::vector<const std::vector<char>*> masks;
    for (std::size_t bits = 0; bits < total; ++bits) {
        for (std::size_t j = 0; j < d; ++j) all[bits][j] = static_cast<char>((bits >> j) & 1U);
        masks.push_back(&all[bits]);
    }
    const auto v = coalition_values(f, x, background, masks);

    // w(s) = s! (d-s-1)! / d!
    std::vector<double> w(d);
    for (std::size_t s = 0; s < d; ++s) w[s] = 1.0 / (static_cast<double>(d) * binomial(d - 1, s));

    Explanation e;
    e.base_value = v[0];
    e.relevance = Vector::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t bits = 0; bits < total; ++bits) {
        const auto size = static_cast<std::size_t>(__builtin_popcountll(bits));
        for (std::size_t i = 0; i < d; ++i) {
            if (bits & (std::size_t{1} << i)) continue;
            e.relevance[static_cast<Eigen::Index>(i)] += w[size] * (v[bits | (std::size_t{1} << i)] - v[bits]);
        }
    }
    return e;
}

Explanation exact_shapley(const models::Predictor& f, std::span<const double> x, const Matrix& background) {
    return exact_shapley(as_batch_model(f), x, background);
}

std::vector<Explanation> rerun_explanations(const BatchModel& f, std::span<const double> x, const Matrix& background,
                                            const ExplainerConfig& cfg, std::size_t runs) {
    require(runs >= 2, "rerun_explanations needs runs >= 2");
    std::vector<Explanation> out;
    out.reserve(runs);
    for (std::size_t r = 0; r < runs; ++r) {
        ExplainerConfig c = cfg;
        c.seed = cfg.seed + r;
        out.push_back(kernel_shap(f, x, background, c));
    }
    return out;
}

KernelShap::KernelShap(Matrix background, ExplainerConfig cfg) : background_(std::move(background)), cfg_(cfg) {
    require(background_.rows() > 0, "empty background");
}

Explanation KernelShap::explain(const BatchModel& f, std::span<const double> x, std::uint64_t seed) const {
    ExplainerConfig c = cfg_;
    c.seed = seed;
    return kernel_shap(f, x, background_, c);
}

}  // namespace ltx::explain

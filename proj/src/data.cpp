#include "ltx/data.hpp"

#include "ltx/csv.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace ltx::data {

void Dataset::validate() const {
    require(features.rows() >= 1 && features.cols() >= 1, "dataset must have at least one row and one feature");
    require(targets.size() == features.rows(), "target count does not match row count");
    require(feature_names.size() == cols(), "feature_names must have one entry per column");
    require(std::set<std::string>(feature_names.begin(), feature_names.end()).size() == cols(),
            "feature names must be unique");
    require(features.allFinite(), "features contain NaN or Inf");
    require(targets.allFinite(), "targets contain NaN or Inf");
    if (task == Task::Classification) {
        for (Eigen::Index i = 0; i < targets.size(); ++i)
            require(targets[i] == 0.0 || targets[i] == 1.0, "non-binary target at row " + std::to_string(i));
    }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    return Dataset{select_rows(features, rows), select(targets, rows), feature_names, task};
}

void SyntheticSpec::validate() const {
    require(n >= 50, "synthetic n must be at least 50");
    require(d >= 2, "synthetic d must be at least 2");
    require(std::isfinite(mismatch_strength) && mismatch_strength >= 0.0, "mismatch_strength must be >= 0");
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
    j = {{"n", s.n}, {"d", s.d}, {"task", to_string(s.task)}, {"mismatch_strength", s.mismatch_strength}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
    s.n = j.at("n").get<std::size_t>();
    s.d = j.at("d").get<std::size_t>();
    s.task = task_from_string(j.value("task", std::string("classification")));
    s.mismatch_strength = j.value("mismatch_strength", 1.0);
    s.seed = j.value("seed", std::uint64_t{0});
}

Dataset parse_csv(std::istream& in, const std::string& target_column, Task task) {
    const csv::Table table = csv::read(in);
    const std::size_t target_idx = table.column(target_column);

    std::vector<std::string> names;
    for (std::size_t c = 0; c < table.header.size(); ++c)
        if (c != target_idx) names.push_back(table.header[c]);
    if (names.empty()) fail(ErrorKind::Parse, "CSV has no feature columns");
    if (table.rows.empty()) fail(ErrorKind::Parse, "CSV has a header but no data rows");

    Dataset ds;
    ds.task = task;
    ds.features.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(names.size()));
    ds.targets.resize(static_cast<Eigen::Index>(table.rows.size()));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto line = table.line_numbers[r];
        Eigen::Index col = 0;
        for (std::size_t c = 0; c < table.header.size(); ++c) {
            const double v = csv::to_double(table.rows[r][c], line, table.header[c]);
            if (c != target_idx) {
                ds.features(static_cast<Eigen::Index>(r), col++) = v;
                continue;
            }
            if (task == Task::Classification && v != 0.0 && v != 1.0)
                fail(ErrorKind::Parse, "line " + std::to_string(line) + ": non-binary target " + table.rows[r][c]);
            ds.targets[static_cast<Eigen::Index>(r)] = v;
        }
    }
    ds.feature_names = std::move(names);
    try {
        ds.validate();
    } catch (const Error& e) {
        fail(ErrorKind::Parse, e.what());
    }
    return ds;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& target_column, Task task) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    try {
        return parse_csv(in, target_column, task);
    } catch (const Error& e) {
        fail(e.kind(), path.string() + ": " + e.what());
    }
}

void write_csv(std::ostream& out, const Dataset& ds, const std::string& target_column, const std::string& preamble) {
    out << preamble;
    for (const auto& name : ds.feature_names) out << name << ',';
    out << target_column << '\n';
    auto put = [&](double v) { out << csv::format(v); };
    for (Eigen::Index r = 0; r < ds.features.rows(); ++r) {
        for (Eigen::Index c = 0; c < ds.features.cols(); ++c) {
            put(ds.features(r, c));
            out << ',';
        }
        put(ds.targets[r]);
        out << '\n';
    }
}

Dataset make_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(derive_seed({spec.seed, 0x5917}));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(spec.n);
    const auto d = static_cast<Eigen::Index>(spec.d);

    Dataset ds;
    ds.task = spec.task;
    for (Eigen::Index j = 0; j < d; ++j) ds.feature_names.push_back("x" + std::to_string(j));
    ds.features.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) ds.features(i, j) = normal(rng);

    // Linear part with decaying coefficients of alternating sign.
    Vector coef(d);
    for (Eigen::Index j = 0; j < d; ++j)
        coef[j] = (j % 2 == 0 ? 0.5 : -0.5) * (1.0 - 0.8 * static_cast<double>(j) / static_cast<double>(d));

    // Zero-mean curvature in x0 that no linear model can represent.
    const double m = spec.mismatch_strength;
    const double noise_sd = spec.task == Task::Classification ? 0.3 : 0.1;

    ds.targets.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto x = ds.features.row(i);
        const double linear = coef.dot(x.transpose());
        const double nonlinear = 6.0 * (x[0] * x[0] - 1.0);
        const double latent = linear + m * nonlinear + noise_sd * normal(rng);
        ds.targets[i] = spec.task == Task::Classification ? (latent > 0.0 ? 1.0 : 0.0) : latent;
    }
    return ds;
}

SplitIndices split(std::size_t n, std::uint64_t seed, std::span<const int> strata) {
    require(n >= 10, "split needs at least 10 rows");
    require(strata.empty() || strata.size() == n, "strata must have one label per row");
    const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    require(n_train + n_val < n && n_val > 0, "too few rows for three nonempty parts");

    Rng rng(derive_seed({seed, 0x5b117}));
    IndexList order = permutation(n, rng);
    if (!strata.empty()) {
        // Interleave strata by relative rank so that every prefix of the
        // ordering holds each stratum in proportion.
        std::map<int, IndexList> groups;
        for (auto i : order) groups[strata[i]].push_back(i);
        struct Keyed {
            double key;
            int stratum;
            std::size_t index;
        };
        std::vector<Keyed> keyed;
        keyed.reserve(n);
        for (const auto& [label, members] : groups)
            for (std::size_t r = 0; r < members.size(); ++r)
                keyed.push_back({(static_cast<double>(r) + 0.5) / static_cast<double>(members.size()), label, members[r]});
        std::sort(keyed.begin(), keyed.end(), [](const Keyed& x, const Keyed& y) {
            return x.key != y.key ? x.key < y.key : x.stratum < y.stratum;
        });
        for (std::size_t i = 0; i < n; ++i) order[i] = keyed[i].index;
    }

    SplitIndices out;
    out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                   order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return out;
}

SplitIndices split(const Dataset& ds, std::uint64_t seed) {
    if (ds.task == Task::Classification) {
        std::vector<int> labels(ds.rows());
        for (std::size_t i = 0; i < ds.rows(); ++i) labels[i] = static_cast<int>(ds.targets[static_cast<Eigen::Index>(i)]);
        return split(ds.rows(), seed, labels);
    }
    return split(ds.rows(), seed);
}

void Scaler::transform(Matrix& m) const {
    require(static_cast<std::size_t>(m.cols()) == means.size(), "scaler dimension mismatch");
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m.col(c).array() -= means[static_cast<std::size_t>(c)];
        if (stds[static_cast<std::size_t>(c)] > 0.0) m.col(c) /= stds[static_cast<std::size_t>(c)];
    }
}

std::vector<double> Scaler::transform(std::span<const double> x) const {
    require(x.size() == means.size(), "scaler dimension mismatch");
    std::vector<double> out(x.size());
    for (std::size_t c = 0; c < x.size(); ++c) {
        out[c] = x[c] - means[c];
        if (stds[c] > 0.0) out[c] /= stds[c];
    }
    return out;
}

void to_json(nlohmann::json& j, const Scaler& s) {
    j = {{"feature_names", s.feature_names}, {"means", s.means}, {"stds", s.stds}};
}

void from_json(const nlohmann::json& j, Scaler& s) {
    j.at("feature_names").get_to(s.feature_names);
    j.at("means").get_to(s.means);
    j.at("stds").get_to(s.stds);
    require(s.means.size() == s.stds.size(), "scaler means/stds length mismatch");
}

Scaler fit_scaler(const Matrix& features, std::span<const std::size_t> fit_rows, std::vector<std::string> names) {
    require(!fit_rows.empty(), "standardize needs at least one fit row");
    const auto d = static_cast<std::size_t>(features.cols());
    Scaler s;
    s.feature_names = std::move(names);
    s.means.assign(d, 0.0);
    s.stds.assign(d, 0.0);
    const double count = static_cast<double>(fit_rows.size());
    for (auto r : fit_rows)
        for (std::size_t c = 0; c < d; ++c) s.means[c] += features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (auto& m : s.means) m /= count;
    for (auto r : fit_rows)
        for (std::size_t c = 0; c < d; ++c) {
            const double dev = features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) - s.means[c];
            s.stds[c] += dev * dev;
        }
    for (std::size_t c = 0; c < d; ++c) {
        s.stds[c] = std::sqrt(s.stds[c] / count);
        // Rounding in the mean leaves ~1e-17 residue on constant columns.
        if (s.stds[c] <= 1e-12 * std::max(1.0, std::abs(s.means[c]))) s.stds[c] = 0.0;
    }
    return s;
}

std::pair<Dataset, Scaler> standardize(const Dataset& ds, std::span<const std::size_t> fit_rows) {
    Scaler s = fit_scaler(ds.features, fit_rows, ds.feature_names);
    Dataset out = ds;
    s.transform(out.features);
    return {std::move(out), std::move(s)};
}

}  // namespace ltx::data

#include "ltx/bench.hpp"

#include "ltx/csv.hpp"
#include "ltx/quality.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#ifndef LTX_VERSION
#define LTX_VERSION "0.0.0"
#endif

namespace ltx::bench {

using nlohmann::json;

std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels) {
    require(scores.size() == labels.size(), "auroc: one label per score is required");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney U from midranks.
    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t) {
            require(labels[order[t]] == 0 || labels[order[t]] == 1, "auroc labels must be 0 or 1");
            if (labels[order[t]] == 1) {
                rank_sum_pos += midrank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

std::size_t rejection_count(std::size_t n, double rate) {
    require(rate >= 0.0 && rate <= 1.0, "rejection rate must lie in [0, 1]");
    return std::min(n, static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 0.5)));
}

Composition set_composition(std::span<const double> scores, std::span<const int> labels, double rate) {
    require(scores.size() == labels.size(), "set_composition: one label per score is required");
    const std::size_t n = scores.size();
    const std::size_t m = rejection_count(n, rate);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    Composition c;
    c.n_rejected = m;
    c.n_accepted = n - m;
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[order[r]] != 0) continue;
        (r < m ? c.low_rejected : c.low_accepted) += 1;
    }
    c.pct_low_rejected = m ? static_cast<double>(c.low_rejected) / static_cast<double>(m) : 0.0;
    c.pct_low_accepted = n - m ? static_cast<double>(c.low_accepted) / static_cast<double>(n - m) : 0.0;
    return c;
}

PairedT paired_t(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size() && a.size() >= 2, "paired t needs two equally long samples of size >= 2");
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    PairedT r;
    r.df = diff.size() - 1;
    r.mean_difference = mean(diff);
    double ss = 0.0;
    for (double v : diff) ss += (v - r.mean_difference) * (v - r.mean_difference);
    const double se = std::sqrt(ss / static_cast<double>(r.df) / static_cast<double>(diff.size()));
    if (se == 0.0) {
        r.t = r.mean_difference == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.mean_difference);
    } else {
        r.t = r.mean_difference / se;
    }
    return r;
}

Grid default_grid(RejectorKind kind) {
    using svm::KernelType;
    Grid g;
    if (reject::is_uler(kind)) {
        g.kernels = {KernelType::Linear, KernelType::Polynomial, KernelType::Rbf};
        g.C = {0.1, 1.0, 10.0};
        if (kind != RejectorKind::UlerNoAug) {
            g.k = {5, 10, 20};
            g.epsilon0 = {0.1, 0.5, 1.0};
        }
    } else if (kind == RejectorKind::NovRejX || kind == RejectorKind::NovRejZ) {
        g.k_nn = {1, 5, 10};
    } else if (kind == RejectorKind::PastaRejLite) {
        g.l2 = {0.1, 1.0, 10.0};
    }
    return g;
}

std::vector<RejectorParams> expand_grid(const RejectorParams& base, const Grid& grid) {
    std::vector<RejectorParams> out{base};
    auto product = [&out](const auto& values, auto&& set) {
        if (values.empty()) return;
        std::vector<RejectorParams> next;
        next.reserve(out.size() * values.size());
        for (const auto& p : out)
            for (const auto& v : values) {
                next.push_back(p);
                set(next.back(), v);
            }
        out = std::move(next);
    };
    product(grid.kernels, [](RejectorParams& p, svm::KernelType v) { p.svm.kernel = v; });
    product(grid.C, [](RejectorParams& p, double v) { p.svm.C = v; });
    product(grid.k, [](RejectorParams& p, std::size_t v) { p.augmentation.k = v; });
    product(grid.epsilon0, [](RejectorParams& p, double v) { p.augmentation.epsilon0 = v; });
    product(grid.k_nn, [](RejectorParams& p, std::size_t v) { p.k_nn = v; });
    product(grid.l2, [](RejectorParams& p, double v) { p.l2 = v; });
    return out;
}

std::vector<int> Labeled::labels() const {
    std::vector<int> out(judged.size());
    for (std::size_t i = 0; i < judged.size(); ++i) out[i] = judged[i].label;
    return out;
}

std::vector<explain::Explanation> Labeled::explanations() const {
    std::vector<explain::Explanation> out;
    out.reserve(judged.size());
    for (const auto& j : judged) out.push_back(j.explanation);
    return out;
}

Labeled Labeled::subset(std::span<const std::size_t> rows) const {
    Labeled out;
    out.judged.reserve(rows.size());
    out.contexts.reserve(rows.size());
    for (auto r : rows) {
        require(r < judged.size(), "subset row out of range");
        out.judged.push_back(judged[r]);
        out.contexts.push_back(contexts[r]);
    }
    return out;
}

GridResult grid_search(const std::vector<RejectorParams>& candidates, const Labeled& train, const Labeled& val) {
    require(!candidates.empty(), "grid search needs at least one candidate");
    const auto val_labels = val.labels();
    const auto val_z = val.explanations();
    std::optional<GridResult> best;
    // Candidates differing only in C share a training problem; the previous
    // solution, rescaled to the new C, seeds SMO.
    std::map<std::string, std::pair<double, std::vector<double>>> solved;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const auto& params = candidates[c];
        std::string key;
        std::vector<double> start;
        if (reject::is_uler(params.kind)) {
            auto rest = params;
            rest.svm.C = 0.0;
            key = json(rest).dump();
            if (auto it = solved.find(key); it != solved.end()) {
                start = it->second.second;
                for (auto& a : start) a = std::min(a * params.svm.C / it->second.first, params.svm.C);
            }
        }
        auto rejector = reject::Rejector::fit(params, train.judged, train.contexts, start);
        if (!key.empty()) {
            const auto& alpha = rejector.svm_model()->alphas();
            solved[key] = {params.svm.C, std::vector<double>(alpha.begin(), alpha.end())};
        }
        const auto scores = rejector.score_batch(val_z, val.contexts);
        const auto a = auroc(scores, val_labels);
        const bool better = !best || (a && (!best->val_auroc || *a > *best->val_auroc));
        if (better) best = GridResult{std::move(rejector), c, a};
    }
    return std::move(*best);
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string pointer_escape(const std::string& key) {
    std::string out;
    for (char ch : key) {
        if (ch == '~') out += "~0";
        else if (ch == '/') out += "~1";
        else out += ch;
    }
    return out;
}

[[noreturn]] void config_error(const std::string& path, const std::string& msg) {
    fail(ErrorKind::Config, "config " + (path.empty() ? std::string("/") : path) + ": " + msg);
}

std::string child(const std::string& path, const std::string& key) { return path + "/" + pointer_escape(key); }
std::string child(const std::string& path, std::size_t index) { return path + "/" + std::to_string(index); }

void check_object(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) config_error(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) {
            std::string names;
            for (const char* a : allowed) names += std::string(names.empty() ? "" : ", ") + a;
            config_error(child(path, it.key()), "unknown key (allowed: " + names + ")");
        }
    }
}

double get_number(const json& j, const std::string& path) {
    if (!j.is_number()) config_error(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) config_error(path, "must be finite");
    return v;
}

std::uint64_t get_unsigned(const json& j, const std::string& path) {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0))
        config_error(path, "expected a non-negative integer");
    return j.get<std::uint64_t>();
}

std::string get_string(const json& j, const std::string& path) {
    if (!j.is_string()) config_error(path, "expected a string");
    return j.get<std::string>();
}

bool get_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) config_error(path, "expected true or false");
    return j.get<bool>();
}

const json* find(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

template <class T, class F>
void read_opt(const json& obj, const std::string& path, const char* key, T& target, F&& getter) {
    if (const json* v = find(obj, key)) target = getter(*v, child(path, key));
}

Task get_task(const json& j, const std::string& path) {
    const auto s = get_string(j, path);
    if (s == "classification") return Task::Classification;
    if (s == "regression") return Task::Regression;
    config_error(path, "task must be \"classification\" or \"regression\"");
}

template <class T, class F>
std::vector<T> get_list(const json& j, const std::string& path, F&& getter) {
    if (!j.is_array() || j.empty()) config_error(path, "expected a nonempty array");
    std::vector<T> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(getter(j[i], child(path, i)));
    return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base.empty()) path = base / path;
    return path.lexically_normal();
}

DatasetSource parse_dataset(const json& j, const std::string& path, const std::filesystem::path& base) {
    check_object(j, path, {"id", "synthetic", "csv", "annotations"});
    DatasetSource ds;
    const json* id = find(j, "id");
    if (!id) config_error(path, "missing required key \"id\"");
    ds.id = get_string(*id, child(path, "id"));
    if (ds.id.empty() || ds.id.find_first_of(",\n\r") != std::string::npos)
        config_error(child(path, "id"), "must be nonempty and free of commas and newlines");
    const int sources = (find(j, "synthetic") ? 1 : 0) + (find(j, "csv") ? 1 : 0) + (find(j, "annotations") ? 1 : 0);
    if (sources != 1) config_error(path, "exactly one of \"synthetic\", \"csv\", \"annotations\" is required");
    if (const json* s = find(j, "synthetic")) {
        const auto p = child(path, "synthetic");
        check_object(*s, p, {"n", "d", "task", "mismatch_strength", "seed"});
        data::SyntheticSpec spec;
        read_opt(*s, p, "n", spec.n, get_unsigned);
        read_opt(*s, p, "d", spec.d, get_unsigned);
        read_opt(*s, p, "task", spec.task, get_task);
        read_opt(*s, p, "mismatch_strength", spec.mismatch_strength, get_number);
        read_opt(*s, p, "seed", spec.seed, get_unsigned);
        try {
            spec.validate();
        } catch (const Error& e) {
            config_error(p, e.what());
        }
        ds.synthetic = spec;
    }
    if (const json* c = find(j, "csv")) {
        const auto p = child(path, "csv");
        check_object(*c, p, {"path", "target", "task"});
        CsvSource src;
        const json* file = find(*c, "path");
        if (!file) config_error(p, "missing required key \"path\"");
        src.path = resolve(base, get_string(*file, child(p, "path")));
        read_opt(*c, p, "target", src.target, get_string);
        const json* task = find(*c, "task");
        if (!task) config_error(p, "missing required key \"task\"");
        src.task = get_task(*task, child(p, "task"));
        ds.csv = src;
    }
    if (const json* a = find(j, "annotations")) {
        const auto p = child(path, "annotations");
        check_object(*a, p, {"path"});
        const json* file = find(*a, "path");
        if (!file) config_error(p, "missing required key \"path\"");
        ds.annotations = resolve(base, get_string(*file, child(p, "path")));
    }
    return ds;
}

Grid parse_grid(const json& j, const std::string& path, RejectorKind kind) {
    Grid g = default_grid(kind);
    const bool uler = reject::is_uler(kind);
    const bool aug = uler && kind != RejectorKind::UlerNoAug;
    const bool nov = kind == RejectorKind::NovRejX || kind == RejectorKind::NovRejZ;
    const bool pasta = kind == RejectorKind::PastaRejLite;
    if (!j.is_object()) config_error(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& key = it.key();
        const auto p = child(path, key);
        const bool allowed = ((key == "kernel" || key == "C") && uler) || ((key == "k" || key == "epsilon0") && aug) ||
                             (key == "k_nn" && nov) || (key == "l2" && pasta);
        if (!allowed) config_error(p, std::string("not a hyperparameter of ") + reject::to_string(kind));
        if (key == "kernel") {
            g.kernels = get_list<svm::KernelType>(*it, p, [](const json& v, const std::string& vp) {
                try {
                    return svm::kernel_from_string(get_string(v, vp));
                } catch (const Error& e) {
                    config_error(vp, e.what());
                }
            });
        } else if (key == "C") {
            g.C = get_list<double>(*it, p, [](const json& v, const std::string& vp) {
                const double c = get_number(v, vp);
                if (c <= 0.0) config_error(vp, "C must be > 0");
                return c;
            });
        } else if (key == "k") {
            g.k = get_list<std::size_t>(*it, p, get_unsigned);
        } else if (key == "epsilon0") {
            g.epsilon0 = get_list<double>(*it, p, [](const json& v, const std::string& vp) {
                const double e = get_number(v, vp);
                if (e < 0.0) config_error(vp, "epsilon0 must be >= 0");
                return e;
            });
        } else if (key == "k_nn") {
            g.k_nn = get_list<std::size_t>(*it, p, [](const json& v, const std::string& vp) {
                const auto k = get_unsigned(v, vp);
                if (k == 0) config_error(vp, "k_nn must be >= 1");
                return static_cast<std::size_t>(k);
            });
        } else if (key == "l2") {
            g.l2 = get_list<double>(*it, p, [](const json& v, const std::string& vp) {
                const double l = get_number(v, vp);
                if (l <= 0.0) config_error(vp, "l2 must be > 0");
                return l;
            });
        }
    }
    return g;
}

}  // namespace

std::vector<double> default_rejection_rates() {
    std::vector<double> rates;
    for (int p = 1; p <= 25; ++p) rates.push_back(p / 100.0);
    return rates;
}

const Grid& ExperimentConfig::grid(RejectorKind kind) const {
    auto it = grids.find(kind);
    require(it != grids.end(), std::string("no grid for rejector ") + reject::to_string(kind));
    return it->second;
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
    check_object(doc, "",
                 {"schema_version", "description", "datasets", "predictor", "oracle", "predictor_fraction", "explainer",
                  "judgment", "quality", "bootstrap_members", "rejectors", "grids", "augmentation", "svm", "repeats",
                  "rejection_rates", "master_seed", "threads"});
    ExperimentConfig cfg;
    const json* version = find(doc, "schema_version");
    if (!version) config_error("", "missing required key \"schema_version\"");
    if (!version->is_number_integer() || version->get<int>() != 1) config_error("/schema_version", "only schema version 1 is supported");

    const json* datasets = find(doc, "datasets");
    if (!datasets) config_error("", "missing required key \"datasets\"");
    cfg.datasets = get_list<DatasetSource>(*datasets, "/datasets", [&](const json& j, const std::string& p) {
        return parse_dataset(j, p, base_dir);
    });
    std::set<std::string> ids;
    for (std::size_t i = 0; i < cfg.datasets.size(); ++i)
        if (!ids.insert(cfg.datasets[i].id).second) config_error(child("/datasets", i) + "/id", "duplicate dataset id");

    if (const json* p = find(doc, "predictor")) {
        check_object(*p, "/predictor", {"l2"});
        read_opt(*p, "/predictor", "l2", cfg.predictor_l2, get_number);
        if (cfg.predictor_l2 <= 0.0) config_error("/predictor/l2", "must be > 0");
    }
    if (const json* o = find(doc, "oracle")) {
        check_object(*o, "/oracle", {"l2", "bandwidth"});
        read_opt(*o, "/oracle", "l2", cfg.oracle_l2, get_number);
        if (cfg.oracle_l2 <= 0.0) config_error("/oracle/l2", "must be > 0");
        if (const json* b = find(*o, "bandwidth"); b && !b->is_null()) {
            cfg.oracle_bandwidth = get_number(*b, "/oracle/bandwidth");
            if (*cfg.oracle_bandwidth <= 0.0) config_error("/oracle/bandwidth", "must be > 0");
        }
    }
    read_opt(doc, "", "predictor_fraction", cfg.predictor_fraction, get_number);
    if (!(cfg.predictor_fraction > 0.0 && cfg.predictor_fraction < 1.0))
        config_error("/predictor_fraction", "must lie strictly between 0 and 1");
    if (const json* e = find(doc, "explainer")) {
        check_object(*e, "/explainer", {"n_samples", "background_cap"});
        read_opt(*e, "/explainer", "n_samples", cfg.explainer.n_samples, get_unsigned);
        read_opt(*e, "/explainer", "background_cap", cfg.explainer.background_cap, get_unsigned);
        if (cfg.explainer.n_samples == 0) config_error("/explainer/n_samples", "must be >= 1");
    }
    if (const json* jd = find(doc, "judgment")) {
        check_object(*jd, "/judgment", {"tau_z", "u_pct"});
        read_opt(*jd, "/judgment", "tau_z", cfg.judgment.tau_z, get_number);
        read_opt(*jd, "/judgment", "u_pct", cfg.judgment.u_pct, get_number);
        try {
            cfg.judgment.validate();
        } catch (const Error& err) {
            config_error("/judgment", err.what());
        }
    }
    if (const json* q = find(doc, "quality")) {
        check_object(*q, "/quality", {"stability_runs", "faithfulness_perturbations"});
        read_opt(*q, "/quality", "stability_runs", cfg.stability_runs, get_unsigned);
        read_opt(*q, "/quality", "faithfulness_perturbations", cfg.faithfulness_perturbations, get_unsigned);
        if (cfg.stability_runs == 0) config_error("/quality/stability_runs", "must be >= 1");
        if (cfg.faithfulness_perturbations == 0) config_error("/quality/faithfulness_perturbations", "must be >= 1");
    }
    read_opt(doc, "", "bootstrap_members", cfg.bootstrap_members, get_unsigned);
    if (cfg.bootstrap_members < 2) config_error("/bootstrap_members", "must be >= 2");

    const json* rejectors = find(doc, "rejectors");
    if (!rejectors) config_error("", "missing required key \"rejectors\"");
    cfg.rejectors = get_list<RejectorKind>(*rejectors, "/rejectors", [](const json& j, const std::string& p) {
        const auto name = get_string(j, p);
        try {
            return reject::rejector_kind_from_string(name);
        } catch (const Error& e) {
            config_error(p, e.what());
        }
    });
    std::set<RejectorKind> seen;
    for (std::size_t i = 0; i < cfg.rejectors.size(); ++i) {
        if (!seen.insert(cfg.rejectors[i]).second) config_error(child("/rejectors", i), "duplicate rejector");
        cfg.grids[cfg.rejectors[i]] = default_grid(cfg.rejectors[i]);
    }
    for (const auto& ds : cfg.datasets) {
        if (ds.simulated()) continue;
        for (std::size_t i = 0; i < cfg.rejectors.size(); ++i)
            if (!reject::uses_explanation_only(cfg.rejectors[i]))
                config_error(child("/rejectors", i), std::string(reject::to_string(cfg.rejectors[i])) +
                                                         " needs instance-level side information, which the annotation dataset '" +
                                                         ds.id + "' does not provide");
    }
    if (const json* g = find(doc, "grids")) {
        if (!g->is_object()) config_error("/grids", "expected an object");
        for (auto it = g->begin(); it != g->end(); ++it) {
            const auto p = child("/grids", it.key());
            RejectorKind kind;
            try {
                kind = reject::rejector_kind_from_string(it.key());
            } catch (const Error& e) {
                config_error(p, e.what());
            }
            if (!seen.count(kind)) config_error(p, "grid given for a rejector that is not listed in /rejectors");
            cfg.grids[kind] = parse_grid(*it, p, kind);
        }
    }
    if (const json* a = find(doc, "augmentation")) {
        check_object(*a, "/augmentation", {"sigma_as_variance"});
        read_opt(*a, "/augmentation", "sigma_as_variance", cfg.sigma_as_variance, get_bool);
    }
    if (const json* s = find(doc, "svm")) {
        check_object(*s, "/svm", {"tolerance"});
        read_opt(*s, "/svm", "tolerance", cfg.svm_tolerance, get_number);
        if (cfg.svm_tolerance <= 0.0) config_error("/svm/tolerance", "must be > 0");
    }
    read_opt(doc, "", "repeats", cfg.repeats, get_unsigned);
    if (cfg.repeats == 0) config_error("/repeats", "must be >= 1");
    if (const json* r = find(doc, "rejection_rates")) {
        cfg.rejection_rates = get_list<double>(*r, "/rejection_rates", [](const json& v, const std::string& p) {
            const double x = get_number(v, p);
            if (!(x > 0.0 && x < 1.0)) config_error(p, "rejection rates must lie strictly between 0 and 1");
            return x;
        });
    } else {
        cfg.rejection_rates = default_rejection_rates();
    }
    read_opt(doc, "", "master_seed", cfg.master_seed, get_unsigned);
    read_opt(doc, "", "threads", cfg.threads, get_unsigned);
    if (cfg.threads == 0) config_error("/threads", "must be >= 1");
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Parse, "config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    auto datasets = json::array();
    for (const auto& ds : cfg.datasets) {
        json d = {{"id", ds.id}};
        if (ds.synthetic) d["synthetic"] = *ds.synthetic;
        if (ds.csv) d["csv"] = {{"path", ds.csv->path.generic_string()}, {"target", ds.csv->target}, {"task", to_string(ds.csv->task)}};
        if (ds.annotations) d["annotations"] = {{"path", ds.annotations->generic_string()}};
        datasets.push_back(std::move(d));
    }
    j["datasets"] = std::move(datasets);
    j["predictor"] = {{"l2", cfg.predictor_l2}};
    j["oracle"] = {{"l2", cfg.oracle_l2}, {"bandwidth", cfg.oracle_bandwidth ? json(*cfg.oracle_bandwidth) : json(nullptr)}};
    j["predictor_fraction"] = cfg.predictor_fraction;
    j["explainer"] = {{"n_samples", cfg.explainer.n_samples}, {"background_cap", cfg.explainer.background_cap}};
    j["judgment"] = {{"tau_z", cfg.judgment.tau_z}, {"u_pct", cfg.judgment.u_pct}};
    j["quality"] = {{"stability_runs", cfg.stability_runs}, {"faithfulness_perturbations", cfg.faithfulness_perturbations}};
    j["bootstrap_members"] = cfg.bootstrap_members;
    auto rejectors = json::array();
    json grids = json::object();
    for (auto kind : cfg.rejectors) {
        rejectors.push_back(reject::to_string(kind));
        const Grid& g = cfg.grid(kind);
        json gj = json::object();
        if (!g.kernels.empty()) {
            auto ks = json::array();
            for (auto k : g.kernels) ks.push_back(svm::to_string(k));
            gj["kernel"] = std::move(ks);
        }
        if (!g.C.empty()) gj["C"] = g.C;
        if (!g.k.empty()) gj["k"] = g.k;
        if (!g.epsilon0.empty()) gj["epsilon0"] = g.epsilon0;
        if (!g.k_nn.empty()) gj["k_nn"] = g.k_nn;
        if (!g.l2.empty()) gj["l2"] = g.l2;
        grids[reject::to_string(kind)] = std::move(gj);
    }
    j["rejectors"] = std::move(rejectors);
    j["grids"] = std::move(grids);
    j["augmentation"] = {{"sigma_as_variance", cfg.sigma_as_variance}};
    j["svm"] = {{"tolerance", cfg.svm_tolerance}};
    j["repeats"] = cfg.repeats;
    j["rejection_rates"] = cfg.rejection_rates;
    j["master_seed"] = cfg.master_seed;
    // threads is deliberately absent: it must not change any artifact.
    return j;
}

std::string config_hash(const ExperimentConfig& cfg) { return hex64(hash_string(config_to_json(cfg).dump())); }

std::string provenance_line(const ExperimentConfig& cfg) {
    return ltx::provenance_line(config_to_json(cfg).dump(), cfg.master_seed);
}

// ---------------------------------------------------------------------------
// Dataset preparation

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_index = n;
    std::exception_ptr failure;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < failed_index) {
                    failed_index = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

namespace {

void emit(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

double balanced_accuracy(const Vector& prob, const Vector& y) {
    double tp = 0, tn = 0, pos = 0, neg = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const bool truth = y[i] > 0.5, guess = prob[i] >= 0.5;
        if (truth) {
            ++pos;
            tp += guess;
        } else {
            ++neg;
            tn += !guess;
        }
    }
    if (pos == 0 || neg == 0) return pos == 0 ? tn / neg : tp / pos;
    return 0.5 * (tp / pos + tn / neg);
}

double score_predictions(Task task, const Vector& pred, const Vector& y) {
    if (task == Task::Classification) return balanced_accuracy(pred, y);
    return (pred - y).squaredNorm() / static_cast<double>(y.size());
}

bool needs(const ExperimentConfig& cfg, RejectorKind kind) {
    return std::find(cfg.rejectors.begin(), cfg.rejectors.end(), kind) != cfg.rejectors.end();
}

PreparedDataset prepare_annotations(const DatasetSource& src, std::uint64_t seed) {
    std::ifstream in(*src.annotations);
    if (!in) fail(ErrorKind::Io, "cannot open judged explanations " + src.annotations->string());
    PreparedDataset out;
    out.id = src.id;
    out.seed = seed;
    out.items.judged = feedback::read_judged_csv(in);
    for (const auto& j : out.items.judged) {
        Context c;
        c.key = hash_string(j.explanation.instance_id);
        out.items.contexts.push_back(std::move(c));
    }
    return out;
}

}  // namespace

PreparedDataset prepare_dataset(const DatasetSource& src, const ExperimentConfig& cfg, const Logger& log) {
    const std::uint64_t ds_seed = derive_seed({cfg.master_seed, hash_string(src.id)});
    if (!src.simulated()) {
        auto p = prepare_annotations(src, ds_seed);
        emit(log, "dataset " + src.id + ": " + std::to_string(p.items.size()) + " judged explanations loaded");
        return p;
    }
    const auto t0 = std::chrono::steady_clock::now();
    data::Dataset raw = src.synthetic ? data::make_synthetic(*src.synthetic) : data::load_csv(src.csv->path, src.csv->target, src.csv->task);
    const std::size_t n = raw.rows();
    const auto n_pred = static_cast<std::size_t>(std::llround(cfg.predictor_fraction * static_cast<double>(n)));
    if (n_pred < 2 || n - n_pred < 10)
        fail(ErrorKind::InvalidArgument, "dataset " + src.id + " is too small for the predictor/judged partition");
    Rng rng(derive_seed({ds_seed, 1}));
    IndexList perm = permutation(n, rng);
    IndexList pred_rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_pred));
    IndexList judged_rows(perm.begin() + static_cast<std::ptrdiff_t>(n_pred), perm.end());
    std::sort(pred_rows.begin(), pred_rows.end());
    std::sort(judged_rows.begin(), judged_rows.end());

    auto [ds, scaler] = data::standardize(raw, pred_rows);
    const Matrix X_pred = select_rows(ds.features, pred_rows);
    const Vector y_pred = select(ds.targets, pred_rows);
    const bool cls = ds.task == Task::Classification;
    const models::PredictorParams f_params{cls ? models::PredictorKind::LogisticRegression : models::PredictorKind::LinearRegression,
                                           cfg.predictor_l2, std::nullopt};
    const models::PredictorParams o_params{cls ? models::PredictorKind::KernelLogistic : models::PredictorKind::KernelRidge,
                                           cfg.oracle_l2, cfg.oracle_bandwidth};
    const auto f = models::fit(f_params, X_pred, y_pred, derive_seed({ds_seed, 2}));
    const auto oracle = models::fit(o_params, X_pred, y_pred, derive_seed({ds_seed, 3}));
    const Matrix background = explain::make_background(X_pred, cfg.explainer.background_cap, derive_seed({ds_seed, 4}));
    std::optional<models::BootstrapEnsemble> ensemble;
    if (!cls && needs(cfg, RejectorKind::PredAmb))
        ensemble = models::BootstrapEnsemble::fit(f_params, X_pred, y_pred, cfg.bootstrap_members, derive_seed({ds_seed, 8}));
    const auto f_batch = explain::as_batch_model(f);
    const auto o_batch = explain::as_batch_model(oracle);
    const bool want_stability = needs(cfg, RejectorKind::StabRej);
    const bool want_faith = needs(cfg, RejectorKind::FaithRej);

    PreparedDataset out;
    out.id = src.id;
    out.task = ds.task;
    out.seed = ds_seed;
    out.items.judged.resize(judged_rows.size());
    out.items.contexts.resize(judged_rows.size());
    parallel_for(judged_rows.size(), cfg.threads, [&](std::size_t i) {
        const std::size_t row = judged_rows[i];
        const auto x = row_span(ds.features, static_cast<Eigen::Index>(row));
        explain::ExplainerConfig ec = cfg.explainer;
        ec.seed = derive_seed({ds_seed, 5, row});
        auto z = explain::kernel_shap(f_batch, x, background, ec);
        explain::ExplainerConfig oc = cfg.explainer;
        oc.seed = derive_seed({ds_seed, 6, row});
        auto z_o = explain::kernel_shap(o_batch, x, background, oc);
        z.instance_id = z_o.instance_id = std::to_string(row);
        Context c;
        c.instance = as_vector(x);
        c.prediction = f.predict(x);
        c.key = hash_string(z.instance_id);
        if (ensemble) c.predictive_variance = ensemble->predictive_variance(x);
        if (want_stability) {
            explain::ExplainerConfig sc = cfg.explainer;
            sc.seed = derive_seed({ds_seed, 7, row});
            c.stability = quality::stability(f_batch, x, z, background, sc, cfg.stability_runs);
        }
        if (want_faith) {
            quality::FaithfulnessConfig fc;
            fc.n_perturbations = cfg.faithfulness_perturbations;
            fc.seed = derive_seed({ds_seed, 9, row});
            c.faithfulness = quality::faithfulness(f_batch, x, z, background, fc);
        }
        out.items.judged[i] = feedback::simulate_judgment(z, z_o, cfg.judgment);
        out.items.contexts[i] = std::move(c);
    });

    const Matrix X_d = select_rows(ds.features, judged_rows);
    const Vector y_d = select(ds.targets, judged_rows);
    Vector pf, po;
    f.predict_batch(X_d, pf);
    oracle.predict_batch(X_d, po);
    out.predictor_score = score_predictions(ds.task, pf, y_d);
    out.oracle_score = score_predictions(ds.task, po, y_d);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[256];
    std::snprintf(buf, sizeof buf, "dataset %s: %zu judged explanations, low-quality fraction %.3f, f %.3f, oracle %.3f (%.1fs)",
                  src.id.c_str(), out.items.size(), reject::low_quality_fraction(out.items.judged), *out.predictor_score,
                  *out.oracle_score, secs);
    emit(log, buf);
    return out;
}

// ---------------------------------------------------------------------------
// Experiment

std::vector<ResultRecord> run_unit(const PreparedDataset& ds, const ExperimentConfig& cfg, std::size_t repeat,
                                   RejectorKind kind, RunOutcome* outcome) {
    const std::uint64_t rep_seed = derive_seed({ds.seed, 0x5e7, repeat});
    const auto labels = ds.items.labels();
    const auto parts = data::split(ds.items.size(), rep_seed, labels);
    const Labeled train = ds.items.subset(parts.train);
    const Labeled val = ds.items.subset(parts.val);
    const Labeled test = ds.items.subset(parts.test);

    const std::uint64_t unit_seed = derive_seed({rep_seed, static_cast<std::uint64_t>(kind)});
    RejectorParams base;
    base.kind = kind;
    base.task = ds.task;
    base.seed = unit_seed;
    base.augmentation.seed = derive_seed({unit_seed, 1});
    base.augmentation.sigma_as_variance = cfg.sigma_as_variance;
    base.svm.tolerance = cfg.svm_tolerance;
    const auto best = grid_search(expand_grid(base, cfg.grid(kind)), train, val);

    // Test labels are consulted only after scoring.
    const auto scores = best.rejector.score_batch(test.explanations(), test.contexts);
    const auto test_labels = test.labels();
    const auto a = auroc(scores, test_labels);
    const auto hyper = best.rejector.params().describe();

    std::vector<ResultRecord> records;
    for (double rate : cfg.rejection_rates) {
        ResultRecord r;
        r.dataset = ds.id;
        r.kind = kind;
        r.repeat = repeat;
        r.seed = rep_seed;
        r.rate = rate;
        r.auroc = a;
        r.composition = set_composition(scores, test_labels, rate);
        r.hyperparameters = hyper;
        records.push_back(std::move(r));
    }
    if (outcome) *outcome = RunOutcome{ds.id, kind, repeat, rep_seed, a, best.val_auroc, hyper};
    return records;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Logger& log) {
    require(!cfg.datasets.empty() && !cfg.rejectors.empty(), "experiment needs datasets and rejectors");
    std::vector<PreparedDataset> prepared;
    for (const auto& src : cfg.datasets) {
        try {
            prepared.push_back(prepare_dataset(src, cfg, log));
        } catch (const Error& e) {
            fail(e.kind(), "dataset " + src.id + ": " + e.what());
        }
    }
    struct Unit {
        std::size_t dataset, repeat;
        RejectorKind kind;
    };
    std::vector<Unit> units;
    for (std::size_t d = 0; d < prepared.size(); ++d)
        for (std::size_t r = 0; r < cfg.repeats; ++r)
            for (auto kind : cfg.rejectors) units.push_back({d, r, kind});

    std::vector<std::vector<ResultRecord>> slots(units.size());
    std::vector<RunOutcome> outcomes(units.size());
    std::mutex log_mu;
    parallel_for(units.size(), cfg.threads, [&](std::size_t u) {
        const Unit& unit = units[u];
        const auto& ds = prepared[unit.dataset];
        const auto t0 = std::chrono::steady_clock::now();
        try {
            slots[u] = run_unit(ds, cfg, unit.repeat, unit.kind, &outcomes[u]);
        } catch (const Error& e) {
            fail(e.kind(), "dataset " + ds.id + ", repeat " + std::to_string(unit.repeat) + ", rejector " +
                               reject::to_string(unit.kind) + ": " + e.what());
        }
        if (log) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            const auto& o = outcomes[u];
            char buf[256];
            std::snprintf(buf, sizeof buf, "%s repeat %zu %-12s auroc=%s [%s] (%.1fs)", ds.id.c_str(), unit.repeat,
                          reject::to_string(unit.kind), o.auroc ? csv::format(*o.auroc).c_str() : "NA",
                          o.hyperparameters.c_str(), secs);
            std::lock_guard lock(log_mu);
            log(buf);
        }
    });

    ExperimentResult result;
    for (std::size_t u = 0; u < units.size(); ++u) {
        for (auto& r : slots[u]) result.records.push_back(std::move(r));
        result.runs.push_back(std::move(outcomes[u]));
    }
    for (const auto& p : prepared) {
        DatasetSummary s;
        s.id = p.id;
        s.task = p.task;
        s.n_judged = p.items.size();
        s.low_quality_fraction = reject::low_quality_fraction(p.items.judged);
        s.predictor_score = p.predictor_score;
        s.oracle_score = p.oracle_score;
        result.datasets.push_back(s);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Output

void write_results_csv(std::ostream& out, const ExperimentResult& result, const ExperimentConfig& cfg) {
    out << provenance_line(cfg) << '\n';
    out << "dataset,rejector,repeat,seed,rejection_rate,auroc,pct_low_quality_accepted,pct_low_quality_rejected,"
           "n_accepted,n_rejected,hyperparameters\n";
    for (const auto& r : result.records) {
        out << r.dataset << ',' << reject::to_string(r.kind) << ',' << r.repeat << ',' << r.seed << ','
            << csv::format(r.rate) << ',' << (r.auroc ? csv::format(*r.auroc) : std::string()) << ','
            << csv::format(r.composition.pct_low_accepted) << ',' << csv::format(r.composition.pct_low_rejected) << ','
            << r.composition.n_accepted << ',' << r.composition.n_rejected << ',' << r.hyperparameters << '\n';
    }
}

void write_curves_csv(std::ostream& out, const ExperimentResult& result, const ExperimentConfig& cfg) {
    out << provenance_line(cfg) << '\n';
    out << "dataset,rejector,rejection_rate,mean_pct_low_quality_accepted,mean_pct_low_quality_rejected,repeats\n";
    for (const auto& ds : result.datasets) {
        for (auto kind : cfg.rejectors) {
            for (double rate : cfg.rejection_rates) {
                double acc = 0.0, rej = 0.0;
                std::size_t count = 0;
                for (const auto& r : result.records) {
                    if (r.dataset != ds.id || r.kind != kind || r.rate != rate) continue;
                    acc += r.composition.pct_low_accepted;
                    rej += r.composition.pct_low_rejected;
                    ++count;
                }
                if (count == 0) continue;
                out << ds.id << ',' << reject::to_string(kind) << ',' << csv::format(rate) << ','
                    << csv::format(acc / static_cast<double>(count)) << ',' << csv::format(rej / static_cast<double>(count))
                    << ',' << count << '\n';
            }
        }
    }
}

json summary_json(const ExperimentResult& result, const ExperimentConfig& cfg) {
    json j;
    j["provenance"] = {{"tool", "ltx"}, {"version", LTX_VERSION}, {"config_hash", config_hash(cfg)}, {"master_seed", cfg.master_seed}};
    auto datasets = json::array();
    for (const auto& ds : result.datasets) {
        json d = {{"id", ds.id},
                  {"task", to_string(ds.task)},
                  {"n_judged", ds.n_judged},
                  {"low_quality_fraction", ds.low_quality_fraction},
                  {"score_metric", ds.task == Task::Classification ? "balanced_accuracy" : "mse"},
                  {"predictor_score", ds.predictor_score ? json(*ds.predictor_score) : json(nullptr)},
                  {"oracle_score", ds.oracle_score ? json(*ds.oracle_score) : json(nullptr)}};
        auto rejectors = json::array();
        for (auto kind : cfg.rejectors) {
            std::vector<double> values;
            auto per_repeat = json::array();
            auto hyper = json::array();
            for (const auto& run : result.runs) {
                if (run.dataset != ds.id || run.kind != kind) continue;
                per_repeat.push_back(run.auroc ? json(*run.auroc) : json(nullptr));
                hyper.push_back(run.hyperparameters);
                if (run.auroc) values.push_back(*run.auroc);
            }
            json rj = {{"rejector", reject::to_string(kind)},
                       {"auroc_mean", values.empty() ? json(nullptr) : json(mean(values))},
                       {"auroc_std", values.empty() ? json(nullptr) : json(population_std(values))},
                       {"auroc_per_repeat", std::move(per_repeat)},
                       {"hyperparameters_per_repeat", std::move(hyper)}};
            rejectors.push_back(std::move(rj));
        }
        d["rejectors"] = std::move(rejectors);
        datasets.push_back(std::move(d));
    }
    j["datasets"] = std::move(datasets);
    return j;
}

void write_outputs(const std::filesystem::path& dir, const ExperimentResult& result, const ExperimentConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create output directory " + dir.string() + ": " + ec.message());
    auto open = [&](const char* name) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) fail(ErrorKind::Io, "cannot write " + (dir / name).string());
        return f;
    };
    {
        auto f = open("results.csv");
        write_results_csv(f, result, cfg);
        if (!f) fail(ErrorKind::Io, "write failed for results.csv");
    }
    {
        auto f = open("curves.csv");
        write_curves_csv(f, result, cfg);
        if (!f) fail(ErrorKind::Io, "write failed for curves.csv");
    }
    {
        auto f = open("summary.json");
        f << summary_json(result, cfg).dump(2) << '\n';
        if (!f) fail(ErrorKind::Io, "write failed for summary.json");
    }
}

}  // namespace ltx::bench

#include "ltx/reject.hpp"

#include "ltx/quality.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace ltx::reject {

void AugmentationConfig::validate() const {
    require(std::isfinite(epsilon0) && epsilon0 >= 0.0, "augmentation epsilon0 must be finite and >= 0");
}

std::vector<double> relevance_std(const std::vector<JudgedExplanation>& judged) {
    require(!judged.empty(), "relevance_std needs at least one explanation");
    const std::size_t d = judged.front().dim();
    std::vector<double> out(d);
    std::vector<double> column(judged.size());
    for (std::size_t f = 0; f < d; ++f) {
        for (std::size_t r = 0; r < judged.size(); ++r) {
            require(judged[r].dim() == d, "explanations differ in dimension");
            column[r] = judged[r].explanation.relevance[static_cast<Eigen::Index>(f)];
        }
        out[f] = population_std(column);
    }
    return out;
}

std::vector<char> augmentation_mask(const JudgedExplanation& j) {
    std::vector<char> wrong(j.dim(), 0);
    for (auto i : j.wrong_set) {
        require(i < j.dim(), "wrong-set index out of range");
        wrong[i] = 1;
    }
    if (j.label == 1) return wrong;
    for (auto& w : wrong) w = static_cast<char>(!w);
    return wrong;
}

std::vector<JudgedExplanation> augment(const JudgedExplanation& j, std::span<const double> sigma,
                                       const AugmentationConfig& cfg) {
    cfg.validate();
    const std::size_t d = j.dim();
    require(sigma.size() == d, "sigma length must equal the explanation dimension");
    const auto mask = augmentation_mask(j);
    std::vector<double> sd(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        require(std::isfinite(sigma[i]) && sigma[i] >= 0.0, "sigma entries must be finite and >= 0");
        if (!mask[i]) continue;
        const double scale = cfg.epsilon0 * sigma[i];
        sd[i] = cfg.sigma_as_variance ? std::sqrt(scale) : scale;
    }
    Rng rng(derive_seed({cfg.seed, 0xa06}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<JudgedExplanation> out(cfg.k, j);
    for (auto& copy : out) {
        for (std::size_t i = 0; i < d; ++i) {
            if (sd[i] == 0.0) continue;
            copy.explanation.relevance[static_cast<Eigen::Index>(i)] += sd[i] * normal(rng);
        }
    }
    return out;
}

namespace {

struct KindInfo {
    RejectorKind kind;
    const char* name;
};

constexpr KindInfo kKinds[] = {
    {RejectorKind::Uler, "ULER"},
    {RejectorKind::UlerZX, "ULER_ZX"},
    {RejectorKind::UlerZY, "ULER_ZY"},
    {RejectorKind::UlerZXY, "ULER_ZXY"},
    {RejectorKind::UlerNoAug, "ULER_NoAug"},
    {RejectorKind::RandRej, "RandRej"},
    {RejectorKind::NovRejX, "NovRejX"},
    {RejectorKind::NovRejZ, "NovRejZ"},
    {RejectorKind::PredAmb, "PredAmb"},
    {RejectorKind::StabRej, "StabRej"},
    {RejectorKind::FaithRej, "FaithRej"},
    {RejectorKind::ComplRej, "ComplRej"},
    {RejectorKind::PastaRejLite, "PASTARejLite"},
};

}  // namespace

const char* to_string(RejectorKind kind) {
    for (const auto& k : kKinds)
        if (k.kind == kind) return k.name;
    return "?";
}

const std::vector<RejectorKind>& all_rejector_kinds() {
    static const std::vector<RejectorKind> kinds = [] {
        std::vector<RejectorKind> v;
        for (const auto& k : kKinds) v.push_back(k.kind);
        return v;
    }();
    return kinds;
}

std::string rejector_kind_names() {
    std::string out;
    for (const auto& k : kKinds) {
        if (!out.empty()) out += ", ";
        out += k.name;
    }
    return out;
}

RejectorKind rejector_kind_from_string(const std::string& name) {
    for (const auto& k : kKinds)
        if (name == k.name) return k.kind;
    fail(ErrorKind::InvalidArgument, "unknown rejector '" + name + "'; valid kinds: " + rejector_kind_names());
}

bool is_uler(RejectorKind kind) {
    switch (kind) {
        case RejectorKind::Uler:
        case RejectorKind::UlerZX:
        case RejectorKind::UlerZY:
        case RejectorKind::UlerZXY:
        case RejectorKind::UlerNoAug: return true;
        default: return false;
    }
}

bool uses_explanation_only(RejectorKind kind) {
    switch (kind) {
        case RejectorKind::Uler:
        case RejectorKind::UlerNoAug:
        case RejectorKind::RandRej:
        case RejectorKind::NovRejZ:
        case RejectorKind::ComplRej:
        case RejectorKind::PastaRejLite: return true;
        default: return false;
    }
}

InputSpace input_space(RejectorKind kind) {
    switch (kind) {
        case RejectorKind::UlerZX: return InputSpace::ZX;
        case RejectorKind::UlerZY: return InputSpace::ZY;
        case RejectorKind::UlerZXY: return InputSpace::ZXY;
        default: return InputSpace::Z;
    }
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

[[noreturn]] void missing(RejectorKind kind, const char* what) {
    fail(ErrorKind::InvalidArgument, std::string(to_string(kind)) + " needs " + what + " in the scoring context");
}

}  // namespace

std::string RejectorParams::describe() const {
    if (is_uler(kind)) {
        std::string s = std::string("kernel=") + svm::to_string(svm.kernel) + ";C=" + fmt(svm.C);
        if (kind != RejectorKind::UlerNoAug)
            s += ";k=" + std::to_string(augmentation.k) + ";epsilon0=" + fmt(augmentation.epsilon0);
        return s;
    }
    switch (kind) {
        case RejectorKind::NovRejX:
        case RejectorKind::NovRejZ: return "k_nn=" + std::to_string(k_nn);
        case RejectorKind::PastaRejLite: return "l2=" + fmt(l2);
        default: return "-";
    }
}

void to_json(nlohmann::json& j, const RejectorParams& p) {
    j = {{"kind", to_string(p.kind)},
         {"task", to_string(p.task)},
         {"augmentation",
          {{"k", p.augmentation.k},
           {"epsilon0", p.augmentation.epsilon0},
           {"seed", p.augmentation.seed},
           {"sigma_as_variance", p.augmentation.sigma_as_variance}}},
         {"svm", p.svm},
         {"k_nn", p.k_nn},
         {"l2", p.l2},
         {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, RejectorParams& p) {
    p.kind = rejector_kind_from_string(j.at("kind").get<std::string>());
    p.task = task_from_string(j.at("task").get<std::string>());
    const auto& a = j.at("augmentation");
    p.augmentation.k = a.at("k").get<std::size_t>();
    p.augmentation.epsilon0 = a.at("epsilon0").get<double>();
    p.augmentation.seed = a.at("seed").get<std::uint64_t>();
    p.augmentation.sigma_as_variance = a.at("sigma_as_variance").get<bool>();
    p.svm = j.at("svm").get<svm::KernelSvmConfig>();
    p.k_nn = j.at("k_nn").get<std::size_t>();
    p.l2 = j.at("l2").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
}

double calibrate_threshold(std::span<const double> val_scores, double rate) {
    require(!val_scores.empty(), "calibration needs at least one validation score");
    require(rate >= 0.0 && rate <= 1.0, "calibration rate must lie in [0, 1]");
    std::vector<double> sorted(val_scores.begin(), val_scores.end());
    for (double s : sorted) require(!std::isnan(s), "calibration scores contain NaN");
    std::sort(sorted.begin(), sorted.end());
    const auto n = sorted.size();
    const auto m = static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 0.5));
    if (m >= n) return std::numeric_limits<double>::infinity();
    return sorted[m];
}

double calibrate_threshold(std::span<const double> val_scores, const CalibrationStrategy& strategy) {
    return calibrate_threshold(val_scores, strategy.rate);
}

double low_quality_fraction(const std::vector<JudgedExplanation>& judged) {
    require(!judged.empty(), "low_quality_fraction of an empty set");
    const auto low = std::count_if(judged.begin(), judged.end(), [](const auto& j) { return j.label == 0; });
    return static_cast<double>(low) / static_cast<double>(judged.size());
}

std::vector<double> uler_features(const Explanation& z, const Context& ctx, InputSpace space) {
    std::vector<double> row(z.relevance.data(), z.relevance.data() + z.relevance.size());
    if (space == InputSpace::ZX || space == InputSpace::ZXY) {
        if (!ctx.instance) fail(ErrorKind::InvalidArgument, "ULER input space with x needs the instance in the scoring context");
        row.insert(row.end(), ctx.instance->data(), ctx.instance->data() + ctx.instance->size());
    }
    if (space == InputSpace::ZY || space == InputSpace::ZXY) {
        if (!ctx.prediction) fail(ErrorKind::InvalidArgument, "ULER input space with y needs the prediction in the scoring context");
        row.push_back(*ctx.prediction);
    }
    return row;
}

double kth_neighbor_distance(const Matrix& reference, std::span<const double> query, std::size_t k) {
    require(reference.rows() > 0, "nearest-neighbour reference set is empty");
    require(static_cast<std::size_t>(reference.cols()) == query.size(), "nearest-neighbour dimension mismatch");
    require(k >= 1, "k_nn must be >= 1");
    const auto q = as_vector(query);
    std::vector<double> d2(static_cast<std::size_t>(reference.rows()));
    for (Eigen::Index r = 0; r < reference.rows(); ++r)
        d2[static_cast<std::size_t>(r)] = (reference.row(r).transpose() - q).squaredNorm();
    const std::size_t kk = std::min(k, d2.size()) - 1;
    std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(kk), d2.end());
    return std::sqrt(d2[kk]);
}

namespace {

const Vector& instance_of(RejectorKind kind, const Context& ctx) {
    if (!ctx.instance) missing(kind, "the instance");
    return *ctx.instance;
}

}  // namespace

Rejector Rejector::fit(const RejectorParams& params, const std::vector<JudgedExplanation>& train,
                       const std::vector<Context>& contexts, std::span<const double> svm_start) {
    require(!train.empty(), "rejector training set is empty");
    require(contexts.size() == train.size(), "one context per training explanation is required");
    const std::size_t d = train.front().dim();
    for (const auto& j : train) {
        require(j.dim() == d, "training explanations differ in dimension");
        require(j.label == 0 || j.label == 1, "quality labels must be 0 or 1");
    }
    Rejector r;
    r.params_ = params;
    const RejectorKind kind = params.kind;
    require(svm_start.empty() || is_uler(kind), "only ULER rejectors take an SVM warm start");

    if (is_uler(kind)) {
        const bool has0 = std::any_of(train.begin(), train.end(), [](const auto& j) { return j.label == 0; });
        const bool has1 = std::any_of(train.begin(), train.end(), [](const auto& j) { return j.label == 1; });
        if (!has0 || !has1) fail(ErrorKind::InvalidArgument, "single-class training set: ULER needs both quality labels");
        const InputSpace space = input_space(kind);
        const std::size_t k = kind == RejectorKind::UlerNoAug ? 0 : params.augmentation.k;
        const auto sigma = k > 0 ? relevance_std(train) : std::vector<double>(d, 0.0);
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
        rows.reserve(train.size() * (k + 1));
        for (std::size_t i = 0; i < train.size(); ++i) {
            rows.push_back(uler_features(train[i].explanation, contexts[i], space));
            labels.push_back(train[i].label == 1 ? 1 : -1);
        }
        if (k > 0) {
            for (std::size_t i = 0; i < train.size(); ++i) {
                AugmentationConfig aug = params.augmentation;
                aug.k = k;
                aug.seed = derive_seed({params.augmentation.seed, i});
                for (const auto& copy : augment(train[i], sigma, aug)) {
                    rows.push_back(uler_features(copy.explanation, contexts[i], space));
                    labels.push_back(train[i].label == 1 ? 1 : -1);
                }
            }
        }
        Matrix X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
        for (std::size_t i = 0; i < rows.size(); ++i)
            X.row(static_cast<Eigen::Index>(i)) = as_vector(rows[i]).transpose();
        r.svm_ = svm::KernelSvm::fit(X, labels, params.svm, svm_start);
        return r;
    }

    switch (kind) {
        case RejectorKind::NovRejX:
        case RejectorKind::NovRejZ: {
            require(params.k_nn >= 1, "k_nn must be >= 1");
            const bool on_x = kind == RejectorKind::NovRejX;
            const std::size_t cols = on_x ? static_cast<std::size_t>(instance_of(kind, contexts.front()).size()) : d;
            r.reference_.resize(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(cols));
            for (std::size_t i = 0; i < train.size(); ++i) {
                const Vector& v = on_x ? instance_of(kind, contexts[i]) : train[i].explanation.relevance;
                require(static_cast<std::size_t>(v.size()) == cols, "reference rows differ in dimension");
                r.reference_.row(static_cast<Eigen::Index>(i)) = v.transpose();
            }
            break;
        }
        case RejectorKind::PastaRejLite: {
            Matrix Z(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(d));
            Vector y(static_cast<Eigen::Index>(train.size()));
            for (std::size_t i = 0; i < train.size(); ++i) {
                Z.row(static_cast<Eigen::Index>(i)) = train[i].explanation.relevance.transpose();
                y[static_cast<Eigen::Index>(i)] = train[i].label;
            }
            IndexList all(train.size());
            std::iota(all.begin(), all.end(), std::size_t{0});
            r.scaler_ = data::fit_scaler(Z, all);
            r.scaler_->transform(Z);
            r.linear_ = models::fit({models::PredictorKind::LogisticRegression, params.l2, std::nullopt}, Z, y, params.seed);
            break;
        }
        default: break;  // scoring rules without fitted state
    }
    return r;
}

double Rejector::score(const Explanation& z, const Context& ctx) const {
    const RejectorKind kind = params_.kind;
    if (is_uler(kind)) {
        require(svm_.has_value(), "rejector is not fitted");
        return svm_->decision(uler_features(z, ctx, input_space(kind)));
    }
    switch (kind) {
        case RejectorKind::RandRej: return hashed_uniform(derive_seed({params_.seed, ctx.key}));
        case RejectorKind::NovRejX:
            return 1.0 / (1.0 + kth_neighbor_distance(reference_, as_span(instance_of(kind, ctx)), params_.k_nn));
        case RejectorKind::NovRejZ:
            return 1.0 / (1.0 + kth_neighbor_distance(reference_, as_span(z.relevance), params_.k_nn));
        case RejectorKind::PredAmb:
            if (params_.task == Task::Classification) {
                if (!ctx.prediction) missing(kind, "the class probability");
                return std::abs(2.0 * *ctx.prediction - 1.0);
            }
            if (!ctx.predictive_variance) missing(kind, "the predictive variance");
            return 1.0 / (1.0 + *ctx.predictive_variance);
        case RejectorKind::StabRej:
            if (!ctx.stability) missing(kind, "the stability");
            return *ctx.stability;
        case RejectorKind::FaithRej:
            if (!ctx.faithfulness) missing(kind, "the faithfulness");
            return *ctx.faithfulness;
        case RejectorKind::ComplRej: return 1.0 / (1.0 + quality::complexity(z));
        case RejectorKind::PastaRejLite: {
            require(scaler_.has_value(), "rejector is not fitted");
            return linear_.predict(scaler_->transform(as_span(z.relevance)));
        }
        default: break;
    }
    fail(ErrorKind::State, "unsupported rejector kind");
}

std::vector<double> Rejector::score_batch(const std::vector<Explanation>& zs, const std::vector<Context>& contexts) const {
    require(zs.size() == contexts.size(), "one context per explanation is required");
    std::vector<double> out(zs.size());
    if (is_uler(params_.kind) && !zs.empty()) {
        require(svm_.has_value(), "rejector is not fitted");
        const InputSpace space = input_space(params_.kind);
        Matrix X;
        for (std::size_t i = 0; i < zs.size(); ++i) {
            const auto row = uler_features(zs[i], contexts[i], space);
            if (i == 0) X.resize(static_cast<Eigen::Index>(zs.size()), static_cast<Eigen::Index>(row.size()));
            require(row.size() == static_cast<std::size_t>(X.cols()), "ULER inputs differ in dimension");
            X.row(static_cast<Eigen::Index>(i)) = as_vector(row).transpose();
        }
        Vector dec;
        svm_->decision_batch(X, dec);
        for (std::size_t i = 0; i < zs.size(); ++i) out[i] = dec[static_cast<Eigen::Index>(i)];
        return out;
    }
    for (std::size_t i = 0; i < zs.size(); ++i) out[i] = score(zs[i], contexts[i]);
    return out;
}

void Rejector::calibrate(std::span<const double> val_scores, const CalibrationStrategy& strategy) {
    threshold_ = calibrate_threshold(val_scores, strategy);
    strategy_ = strategy;
}

double Rejector::threshold() const {
    if (!threshold_) fail(ErrorKind::State, "rejector is not calibrated; call calibrate first");
    return *threshold_;
}

Decision Rejector::decide(const Explanation& z, const Context& ctx) const {
    const double tau = threshold();
    Decision d;
    d.score = score(z, ctx);
    d.rejected = d.score < tau;
    if (!d.rejected) d.prediction = ctx.prediction;
    return d;
}

namespace {

nlohmann::json matrix_json(const Matrix& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto s = row_span(m, r);
        rows.push_back(std::vector<double>(s.begin(), s.end()));
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
    if (j.empty()) return {};
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(static_cast<Eigen::Index>(j.size()), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
        auto row = j[r].get<std::vector<double>>();
        require(static_cast<Eigen::Index>(row.size()) == cols, "ragged matrix in rejector JSON");
        m.row(static_cast<Eigen::Index>(r)) = as_vector(row).transpose();
    }
    return m;
}

const char* strategy_name(CalibrationStrategy::Kind k) {
    return k == CalibrationStrategy::Kind::TargetRate ? "target_rate" : "match_train_low_quality_fraction";
}

}  // namespace

void to_json(nlohmann::json& j, const Rejector& r) {
    j = {{"params", r.params_}};
    if (r.svm_) j["svm"] = *r.svm_;
    if (r.reference_.size() > 0) j["reference"] = matrix_json(r.reference_);
    if (r.scaler_) {
        j["scaler"] = *r.scaler_;
        j["linear"] = r.linear_;
    }
    if (r.threshold_) {
        // JSON has no infinity; a null threshold under a present strategy means "reject all".
        j["threshold"] = std::isfinite(*r.threshold_) ? nlohmann::json(*r.threshold_) : nlohmann::json(nullptr);
        j["calibrated"] = true;
    }
    if (r.strategy_) j["calibration"] = {{"strategy", strategy_name(r.strategy_->kind)}, {"rate", r.strategy_->rate}};
}

void from_json(const nlohmann::json& j, Rejector& r) {
    r = Rejector();
    r.params_ = j.at("params").get<RejectorParams>();
    if (j.contains("svm")) r.svm_ = j["svm"].get<svm::KernelSvm>();
    if (j.contains("reference")) r.reference_ = matrix_from_json(j["reference"]);
    if (j.contains("scaler")) {
        r.scaler_ = j["scaler"].get<data::Scaler>();
        r.linear_ = j.at("linear").get<models::Predictor>();
    }
    if (j.value("calibrated", false)) {
        const auto& t = j.at("threshold");
        r.threshold_ = t.is_null() ? std::numeric_limits<double>::infinity() : t.get<double>();
    }
    if (j.contains("calibration")) {
        const auto& c = j["calibration"];
        const auto name = c.at("strategy").get<std::string>();
        CalibrationStrategy s;
        s.kind = name == "target_rate" ? CalibrationStrategy::Kind::TargetRate
                                       : CalibrationStrategy::Kind::MatchTrainLowQualityFraction;
        s.rate = c.at("rate").get<double>();
        r.strategy_ = s;
    }
}

}  // namespace ltx::reject

#include "ltx/models.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace ltx::models {

const char* to_string(PredictorKind kind) {
    switch (kind) {
        case PredictorKind::LinearRegression: return "linear_regression";
        case PredictorKind::LogisticRegression: return "logistic_regression";
        case PredictorKind::KernelRidge: return "kernel_ridge";
        case PredictorKind::KernelLogistic: return "kernel_logistic";
    }
    return "?";
}

PredictorKind predictor_kind_from_string(const std::string& name) {
    for (auto k : {PredictorKind::LinearRegression, PredictorKind::LogisticRegression, PredictorKind::KernelRidge,
                   PredictorKind::KernelLogistic})
        if (name == to_string(k)) return k;
    fail(ErrorKind::InvalidArgument, "unknown predictor kind '" + name +
                                         "' (expected linear_regression, logistic_regression, kernel_ridge, kernel_logistic)");
}

bool is_classifier(PredictorKind kind) {
    return kind == PredictorKind::LogisticRegression || kind == PredictorKind::KernelLogistic;
}

bool is_kernel(PredictorKind kind) { return kind == PredictorKind::KernelRidge || kind == PredictorKind::KernelLogistic; }

void to_json(nlohmann::json& j, const PredictorParams& p) {
    j = {{"kind", to_string(p.kind)}, {"l2", p.l2}};
    if (p.bandwidth) j["bandwidth"] = *p.bandwidth;
}

void from_json(const nlohmann::json& j, PredictorParams& p) {
    p.kind = predictor_kind_from_string(j.at("kind").get<std::string>());
    p.l2 = j.value("l2", 1.0);
    if (j.contains("bandwidth") && !j["bandwidth"].is_null()) p.bandwidth = j["bandwidth"].get<double>();
    else p.bandwidth.reset();
}

Predictor::Predictor(PredictorKind kind, double l2, double bandwidth, Vector weights, double intercept, Matrix support)
    : kind_(kind), l2_(l2), bandwidth_(bandwidth), weights_(std::move(weights)), intercept_(intercept),
      support_(std::move(support)) {
    if (is_kernel(kind_)) {
        require(support_.rows() == weights_.size(), "kernel predictor needs one coefficient per support row");
        require(bandwidth_ > 0.0, "kernel predictor needs a positive bandwidth");
        dim_ = static_cast<std::size_t>(support_.cols());
        support_sq_norms_ = support_.rowwise().squaredNorm();
    } else {
        dim_ = static_cast<std::size_t>(weights_.size());
    }
}

double Predictor::raw(std::span<const double> x) const {
    if (x.size() != dim_)
        fail(ErrorKind::InvalidArgument, "dimension mismatch: predictor expects " + std::to_string(dim_) +
                                             " features, got " + std::to_string(x.size()));
    const auto xv = as_vector(x);
    if (!is_kernel(kind_)) return weights_.dot(xv) + intercept_;
    const double inv = 1.0 / (2.0 * bandwidth_ * bandwidth_);
    double acc = intercept_;
    for (Eigen::Index j = 0; j < support_.rows(); ++j)
        acc += weights_[j] * std::exp(-(support_.row(j).transpose() - xv).squaredNorm() * inv);
    return acc;
}

double Predictor::predict(std::span<const double> x) const {
    const double r = raw(x);
    return is_classifier() ? sigmoid(r) : r;
}

void Predictor::raw_batch(const Matrix& rows, Vector& out) const {
    if (static_cast<std::size_t>(rows.cols()) != dim_)
        fail(ErrorKind::InvalidArgument, "dimension mismatch: predictor expects " + std::to_string(dim_) +
                                             " features, got " + std::to_string(rows.cols()));
    out.resize(rows.rows());
    if (!is_kernel(kind_)) {
        out.noalias() = rows * weights_;
        out.array() += intercept_;
        return;
    }
    const double inv = 1.0 / (2.0 * bandwidth_ * bandwidth_);
    constexpr Eigen::Index block = 256;
    Eigen::MatrixXd dist;
    for (Eigen::Index start = 0; start < rows.rows(); start += block) {
        const Eigen::Index len = std::min(block, rows.rows() - start);
        const auto chunk = rows.middleRows(start, len);
        dist.noalias() = -2.0 * chunk * support_.transpose();
        dist.colwise() += chunk.rowwise().squaredNorm();
        dist.rowwise() += support_sq_norms_.transpose();
        dist = (-(dist.array().max(0.0)) * inv).exp().matrix();
        out.segment(start, len).noalias() = dist * weights_;
    }
    out.array() += intercept_;
}

void Predictor::predict_batch(const Matrix& rows, Vector& out) const {
    raw_batch(rows, out);
    if (is_classifier()) out = out.unaryExpr([](double t) { return sigmoid(t); });
}

void to_json(nlohmann::json& j, const Predictor& p) {
    j = {{"kind", to_string(p.kind())},
         {"l2", p.l2()},
         {"intercept", p.intercept()},
         {"weights", std::vector<double>(p.weights().begin(), p.weights().end())}};
    if (is_kernel(p.kind())) {
        j["bandwidth"] = p.bandwidth();
        auto support = nlohmann::json::array();
        for (Eigen::Index r = 0; r < p.support().rows(); ++r) {
            auto row = row_span(p.support(), r);
            support.push_back(std::vector<double>(row.begin(), row.end()));
        }
        j["support"] = std::move(support);
    }
}

void from_json(const nlohmann::json& j, Predictor& p) {
    const auto kind = predictor_kind_from_string(j.at("kind").get<std::string>());
    auto w = j.at("weights").get<std::vector<double>>();
    Vector weights = Eigen::Map<Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    Matrix support;
    double bandwidth = 0.0;
    if (is_kernel(kind)) {
        bandwidth = j.at("bandwidth").get<double>();
        const auto& rows = j.at("support");
        const auto d = rows.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(rows[0].size());
        support.resize(static_cast<Eigen::Index>(rows.size()), d);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            auto row = rows[r].get<std::vector<double>>();
            require(static_cast<Eigen::Index>(row.size()) == d, "ragged support matrix in predictor JSON");
            for (Eigen::Index c = 0; c < d; ++c) support(static_cast<Eigen::Index>(r), c) = row[static_cast<std::size_t>(c)];
        }
    }
    p = Predictor(kind, j.value("l2", 0.0), bandwidth, std::move(weights), j.at("intercept").get<double>(), std::move(support));
}

double median_pairwise_distance(const Matrix& X, std::uint64_t seed) {
    require(X.rows() >= 2, "median heuristic needs at least two rows");
    IndexList rows;
    if (X.rows() > 1000) {
        Rng rng(derive_seed({seed, 0xba4d}));
        rows = permutation(static_cast<std::size_t>(X.rows()), rng);
        rows.resize(1000);
    } else {
        rows.resize(static_cast<std::size_t>(X.rows()));
        std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    std::vector<double> dists;
    dists.reserve(rows.size() * (rows.size() - 1) / 2);
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = a + 1; b < rows.size(); ++b)
            dists.push_back((X.row(static_cast<Eigen::Index>(rows[a])) - X.row(static_cast<Eigen::Index>(rows[b]))).norm());
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    const double med = *mid;
    return med > 0.0 ? med : 1.0;
}

Matrix rbf_kernel(const Matrix& A, const Matrix& B, double bandwidth) {
    Matrix dist = -2.0 * A * B.transpose();
    dist.colwise() += A.rowwise().squaredNorm();
    dist.rowwise() += B.rowwise().squaredNorm().transpose();
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    return (-(dist.array().max(0.0)) * inv).exp().matrix();
}

namespace {

constexpr double kStationarityTol = 1e-8;

double log1pexp(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

void check_inputs(const Matrix& X, const Vector& y, bool classification) {
    require(X.rows() == y.size(), "row count of X must equal length of y");
    require(X.rows() >= 1 && X.cols() >= 1, "empty training set");
    require(X.allFinite() && y.allFinite(), "training data contain NaN or Inf");
    if (classification)
        for (Eigen::Index i = 0; i < y.size(); ++i) require(y[i] == 0.0 || y[i] == 1.0, "classification targets must be 0/1");
}

[[noreturn]] void singular() {
    fail(ErrorKind::Numeric, "singular system: the training problem is not identifiable without regularization; raise l2");
}

Predictor fit_linear_regression(const PredictorParams& p, const Matrix& X, const Vector& y) {
    const Eigen::RowVectorXd xm = X.colwise().mean();
    const double ym = y.mean();
    const Matrix Xc = X.rowwise() - xm;
    Eigen::MatrixXd A = Xc.transpose() * Xc;
    A.diagonal().array() += p.l2;
    const Vector rhs = Xc.transpose() * (y.array() - ym).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    const auto D = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || D.minCoeff() <= 1e-12 * std::max(1.0, D.maxCoeff())) singular();
    Vector w = ldlt.solve(rhs);
    return Predictor(p.kind, p.l2, 0.0, w, ym - xm.dot(w), {});
}

Predictor fit_logistic_regression(const PredictorParams& p, const Matrix& X, const Vector& y) {
    const auto n = X.rows();
    const auto d = X.cols();
    Matrix Xa(n, d + 1);
    Xa.leftCols(d) = X;
    Xa.col(d).setOnes();
    Vector theta = Vector::Zero(d + 1);
    auto objective = [&](const Vector& t) {
        const Vector s = Xa * t;
        double v = 0.5 * p.l2 * t.head(d).squaredNorm();
        for (Eigen::Index i = 0; i < n; ++i) v += log1pexp(s[i]) - y[i] * s[i];
        return v;
    };
    double current = objective(theta);
    for (int iter = 0; iter < 100; ++iter) {
        const Vector s = Xa * theta;
        Vector prob(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            prob[i] = sigmoid(s[i]);
            w[i] = prob[i] * (1.0 - prob[i]);
        }
        Vector grad = Xa.transpose() * (prob - y);
        grad.head(d) += p.l2 * theta.head(d);
        if (grad.lpNorm<Eigen::Infinity>() <= kStationarityTol) return Predictor(p.kind, p.l2, 0.0, theta.head(d), theta[d], {});
        Eigen::MatrixXd H = Xa.transpose() * w.asDiagonal() * Xa;
        H.diagonal().head(d).array() += p.l2;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
        const auto D = ldlt.vectorD().cwiseAbs();
        if (ldlt.info() != Eigen::Success || D.minCoeff() <= 1e-14 * std::max(1.0, D.maxCoeff())) singular();
        const Vector step = ldlt.solve(grad);
        double t = 1.0;
        Vector next = theta - step;
        double value = objective(next);
        for (int h = 0; h < 40 && !(value <= current); ++h) {
            t *= 0.5;
            next = theta - t * step;
            value = objective(next);
        }
        if (!(value <= current)) break;
        const bool stalled = current - value <= 1e-15 * std::max(1.0, std::abs(current));
        theta = next;
        current = value;
        if (stalled) return Predictor(p.kind, p.l2, 0.0, theta.head(d), theta[d], {});
    }
    if (p.l2 <= 0.0) singular();
    return Predictor(p.kind, p.l2, 0.0, theta.head(d), theta[d], {});
}

Predictor fit_kernel_ridge(const PredictorParams& p, const Matrix& X, const Vector& y, double h) {
    Eigen::MatrixXd K = rbf_kernel(X, X, h);
    K.diagonal().array() += p.l2;
    const double ym = y.mean();
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) singular();
    Vector alpha = llt.solve((y.array() - ym).matrix());
    return Predictor(p.kind, p.l2, h, std::move(alpha), ym, X);
}

// Damped Newton on sum_i logloss(f_i) + l2/2 a'Ka with f = Ka + b. Each step
// solves the weighted ridge problem in the symmetric form
//   (S K S + l2 I) beta + s b = s.z,   s'beta = 0,   a = S beta,
// where s = sqrt(p(1-p)) and z is the working response.
Predictor fit_kernel_logistic(const PredictorParams& p, const Matrix& X, const Vector& y, double h) {
    const auto n = X.rows();
    const Eigen::MatrixXd K = rbf_kernel(X, X, h);
    Vector alpha = Vector::Zero(n);
    const double ybar = std::clamp(y.mean(), 1e-6, 1.0 - 1e-6);
    double b = std::log(ybar / (1.0 - ybar));
    Vector Ka = Vector::Zero(n);

    auto objective = [&](const Vector& a, const Vector& ka, double bias) {
        double v = 0.5 * p.l2 * a.dot(ka);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double f = ka[i] + bias;
            v += log1pexp(f) - y[i] * f;
        }
        return v;
    };
    double current = objective(alpha, Ka, b);

    for (int iter = 0; iter < 200; ++iter) {
        Vector f = Ka.array() + b;
        Vector g(n), s(n), sz(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double pr = sigmoid(f[i]);
            const double w = std::max(pr * (1.0 - pr), 1e-12);
            g[i] = pr - y[i];
            s[i] = std::sqrt(w);
            sz[i] = s[i] * f[i] - g[i] / s[i];
        }
        const Vector r = g + p.l2 * alpha;
        if (r.lpNorm<Eigen::Infinity>() <= kStationarityTol && std::abs(g.sum()) <= kStationarityTol * static_cast<double>(n))
            break;

        Eigen::MatrixXd B = s.asDiagonal() * K * s.asDiagonal();
        B.diagonal().array() += p.l2;
        Eigen::LLT<Eigen::MatrixXd> llt(B);
        if (llt.info() != Eigen::Success) singular();
        const Vector u = llt.solve(sz);
        const Vector v = llt.solve(s);
        const double b_new = s.dot(u) / s.dot(v);
        const Vector alpha_new = s.cwiseProduct(u - b_new * v);

        const Vector da = alpha_new - alpha;
        const double db = b_new - b;
        const Vector Kda = K * da;
        double t = 1.0;
        double value = objective(alpha + da, Ka + Kda, b + db);
        for (int hstep = 0; hstep < 40 && !(value <= current); ++hstep) {
            t *= 0.5;
            value = objective(alpha + t * da, Ka + t * Kda, b + t * db);
        }
        if (!(value <= current)) break;
        alpha += t * da;
        Ka += t * Kda;
        b += t * db;
        const bool stalled = current - value <= 1e-15 * std::max(1.0, std::abs(current));
        current = value;
        if (stalled) break;
    }
    return Predictor(p.kind, p.l2, h, std::move(alpha), b, X);
}

}  // namespace

Predictor fit(const PredictorParams& params, const Matrix& X, const Vector& y, std::uint64_t seed) {
    check_inputs(X, y, is_classifier(params.kind));
    require(params.l2 >= 0.0, "l2 must be >= 0");
    if (is_kernel(params.kind)) {
        require(params.l2 > 0.0, "kernel predictors need l2 > 0");
        double h = params.bandwidth.value_or(0.0);
        if (!params.bandwidth) h = X.rows() >= 2 ? median_pairwise_distance(X, seed) : 1.0;
        require(h > 0.0, "bandwidth must be positive");
        return params.kind == PredictorKind::KernelRidge ? fit_kernel_ridge(params, X, y, h)
                                                         : fit_kernel_logistic(params, X, y, h);
    }
    return params.kind == PredictorKind::LinearRegression ? fit_linear_regression(params, X, y)
                                                          : fit_logistic_regression(params, X, y);
}

BootstrapEnsemble::BootstrapEnsemble(std::vector<Predictor> members) : members_(std::move(members)) {
    require(members_.size() >= 2, "a bootstrap ensemble needs at least two members");
    for (const auto& m : members_)
        require(m.kind() == members_.front().kind() && m.dim() == members_.front().dim(),
                "ensemble members must share kind and dimension");
}

BootstrapEnsemble BootstrapEnsemble::fit(const PredictorParams& params, const Matrix& X, const Vector& y,
                                         std::size_t members, std::uint64_t seed) {
    require(members >= 2, "a bootstrap ensemble needs at least two members");
    std::vector<Predictor> out;
    const auto n = static_cast<std::size_t>(X.rows());
    for (std::size_t m = 0; m < members; ++m) {
        Rng rng(derive_seed({seed, 0xb007, m}));
        IndexList rows(n);
        for (auto& r : rows) r = static_cast<std::size_t>(rng() % n);
        out.push_back(models::fit(params, select_rows(X, rows), select(y, rows), derive_seed({seed, m})));
    }
    return BootstrapEnsemble(std::move(out));
}

double BootstrapEnsemble::predictive_variance(std::span<const double> x) const {
    std::vector<double> preds;
    preds.reserve(members_.size());
    for (const auto& m : members_) preds.push_back(m.predict(x));
    const double sd = population_std(preds);
    return sd * sd;
}

}  // namespace ltx::models

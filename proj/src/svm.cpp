#include "ltx/svm.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <numeric>

namespace ltx::svm {

const char* to_string(KernelType k) {
    switch (k) {
        case KernelType::Linear: return "linear";
        case KernelType::Polynomial: return "polynomial";
        case KernelType::Rbf: return "rbf";
    }
    return "?";
}

KernelType kernel_from_string(const std::string& name) {
    for (auto k : {KernelType::Linear, KernelType::Polynomial, KernelType::Rbf})
        if (name == to_string(k)) return k;
    fail(ErrorKind::InvalidArgument, "unknown SVM kernel '" + name + "' (expected linear, polynomial, rbf)");
}

void to_json(nlohmann::json& j, const KernelSvmConfig& c) {
    j = {{"kernel", to_string(c.kernel)}, {"C", c.C},           {"degree", c.degree},
         {"coef0", c.coef0},              {"tolerance", c.tolerance}, {"standardize", c.standardize}};
    if (c.bandwidth) j["bandwidth"] = *c.bandwidth;
}

void from_json(const nlohmann::json& j, KernelSvmConfig& c) {
    c.kernel = kernel_from_string(j.at("kernel").get<std::string>());
    c.C = j.value("C", 1.0);
    c.degree = j.value("degree", 3);
    c.coef0 = j.value("coef0", 1.0);
    c.tolerance = j.value("tolerance", 1e-3);
    c.standardize = j.value("standardize", true);
    if (j.contains("bandwidth") && !j["bandwidth"].is_null()) c.bandwidth = j["bandwidth"].get<double>();
}

namespace {

struct KernelSpec {
    KernelType type;
    double gamma;  // RBF: 1 / (2 h^2); polynomial: 1 / d
    double coef0;
    int degree;

    double apply_dot(double dot, double sq_a, double sq_b) const {
        switch (type) {
            case KernelType::Linear: return dot;
            case KernelType::Polynomial: {
                const double base = gamma * dot + coef0;
                if (degree == 3) return base * base * base;
                return std::pow(base, degree);
            }
            case KernelType::Rbf: return std::exp(-gamma * std::max(sq_a + sq_b - 2.0 * dot, 0.0));
        }
        return 0.0;
    }

    // In place: dots[k] = K(a, b_k) given |a|^2 and every |b_k|^2.
    void apply_row(Vector& dots, double sq_a, const Vector& sq_b) const {
        auto r = dots.array();
        switch (type) {
            case KernelType::Linear: break;
            case KernelType::Polynomial:
                if (degree == 3) {
                    const Eigen::ArrayXd base = gamma * r + coef0;
                    r = base * base * base;
                } else {
                    r = (gamma * r + coef0).pow(static_cast<double>(degree));
                }
                break;
            case KernelType::Rbf: r = (-gamma * (sq_a + sq_b.array() - 2.0 * r).max(0.0)).exp(); break;
        }
    }
};

constexpr double kTau = 1e-12;

KernelSpec make_spec(const KernelSvmConfig& cfg, double bandwidth, std::size_t d) {
    KernelSpec s{cfg.kernel, 0.0, cfg.coef0, cfg.degree};
    if (cfg.kernel == KernelType::Rbf) s.gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    if (cfg.kernel == KernelType::Polynomial) s.gamma = 1.0 / static_cast<double>(d);
    return s;
}

// SMO on  min 0.5 a'Qa - e'a  s.t.  y'a = 0, 0 <= a <= C,  Q = diag(y) K diag(y),
// with second-order working-set selection and libsvm-style shrinking.
// Q rows restricted to the active set are cached (LRU) until the set changes.
class Solver {
public:
    Solver(const Matrix& X, std::span<const int> y, KernelSpec spec, double C, std::size_t cache_bytes,
           std::span<const double> start)
        : X_(X), spec_(spec), C_(C), n_(static_cast<std::size_t>(X.rows())), y_(y.begin(), y.end()) {
        sq_ = X_.rowwise().squaredNorm();
        yv_ = Eigen::Map<const Vector>(y_.data(), idx(n_));
        qd_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) qd_[i] = spec_.apply_dot(sq_[idx(i)], sq_[idx(i)], sq_[idx(i)]);
        alpha_.assign(n_, 0.0);
        G_.assign(n_, -1.0);
        G_bar_.assign(n_, 0.0);
        if (!start.empty()) {
            for (std::size_t i = 0; i < n_; ++i) alpha_[i] = std::clamp(start[i], 0.0, C_);
            for (std::size_t i = 0; i < n_; ++i) {
                if (lower(i)) continue;
                const Vector r = full_row(i);
                for (std::size_t k = 0; k < n_; ++k) G_[k] += alpha_[i] * r[idx(k)];
                if (upper(i))
                    for (std::size_t k = 0; k < n_; ++k) G_bar_[k] += C_ * r[idx(k)];
            }
        }
        cache_bytes_ = cache_bytes;
        std::vector<std::size_t> all(n_);
        std::iota(all.begin(), all.end(), std::size_t{0});
        set_active(std::move(all));
    }

    TrainingStats run(double eps, std::size_t max_iter) {
        TrainingStats st;
        std::size_t counter = std::min<std::size_t>(n_, 1000) + 1;
        bool unshrunk = false;
        while (st.iterations < max_iter) {
            if (--counter == 0) {
                counter = std::min<std::size_t>(n_, 1000);
                shrink(eps, unshrunk);
            }
            std::size_t i = 0, j = 0;
            double viol = 0.0;
            if (!select(eps, i, j, viol)) {
                reconstruct_gradient();
                restore_all();
                if (!select(eps, i, j, viol)) {
                    st.converged = true;
                    st.max_violation = viol;
                    break;
                }
                counter = 1;
            }
            st.max_violation = viol;
            ++st.iterations;
            step(i, j);
        }
        reconstruct_gradient();
        restore_all();
        if (!st.converged) {
            std::size_t i = 0, j = 0;
            double viol = 0.0;
            st.converged = !select(eps, i, j, viol);
            st.max_violation = viol;
        }
        return st;
    }

    const std::vector<double>& alpha() const { return alpha_; }
    const std::vector<double>& gradient() const { return G_; }

private:
    static Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

    bool upper(std::size_t t) const { return alpha_[t] >= C_; }
    bool lower(std::size_t t) const { return alpha_[t] <= 0.0; }

    void set_active(std::vector<std::size_t> active) {
        active_ = std::move(active);
        pos_.assign(n_, kNone);
        for (std::size_t p = 0; p < active_.size(); ++p) pos_[active_[p]] = p;
        X_active_.resize(idx(active_.size()), X_.cols());
        sq_active_.resize(idx(active_.size()));
        y_active_.resize(idx(active_.size()));
        for (std::size_t p = 0; p < active_.size(); ++p) {
            X_active_.row(idx(p)) = X_.row(idx(active_[p]));
            sq_active_[idx(p)] = sq_[idx(active_[p])];
            y_active_[idx(p)] = y_[active_[p]];
        }
        lru_.clear();
        rows_.assign(n_, Vector());
        slots_.assign(n_, lru_.end());
        const std::size_t row_bytes = sizeof(double) * std::max<std::size_t>(active_.size(), 1);
        capacity_ = std::max<std::size_t>(2, cache_bytes_ / row_bytes);
    }

    void restore_all() {
        if (active_.size() == n_) return;
        std::vector<std::size_t> all(n_);
        std::iota(all.begin(), all.end(), std::size_t{0});
        set_active(std::move(all));
    }

    void transform_row(Vector& r, std::size_t i, const Vector& sq_cols, const Vector& y_cols) const {
        spec_.apply_row(r, sq_[idx(i)], sq_cols);
        r.array() *= y_[i] * y_cols.array();
    }

    // Q row i over the active set, indexed by active position.
    const Vector& row(std::size_t i) {
        if (slots_[i] != lru_.end()) {
            lru_.splice(lru_.begin(), lru_, slots_[i]);
            return rows_[i];
        }
        if (lru_.size() >= capacity_) {
            const std::size_t victim = lru_.back();
            lru_.pop_back();
            slots_[victim] = lru_.end();
            rows_[victim] = Vector();
        }
        Vector r = X_active_ * X_.row(idx(i)).transpose();
        transform_row(r, i, sq_active_, y_active_);
        rows_[i] = std::move(r);
        lru_.push_front(i);
        slots_[i] = lru_.begin();
        return rows_[i];
    }

    Vector full_row(std::size_t i) const {
        Vector r = Xc_ * X_.row(idx(i)).transpose();
        transform_row(r, i, sq_, yv_);
        return r;
    }

    bool select(double eps, std::size_t& out_i, std::size_t& out_j, double& viol) {
        double gmax = -std::numeric_limits<double>::infinity();
        std::size_t i = kNone;
        for (std::size_t t : active_) {
            if (y_[t] > 0) {
                if (!upper(t) && -G_[t] >= gmax) gmax = -G_[t], i = t;
            } else if (!lower(t) && G_[t] >= gmax) {
                gmax = G_[t], i = t;
            }
        }
        if (i == kNone) {
            viol = 0.0;
            return false;
        }
        const Vector& Qi = row(i);
        double gmax2 = -std::numeric_limits<double>::infinity();
        double best = std::numeric_limits<double>::infinity();
        std::size_t j = kNone;
        for (std::size_t p = 0; p < active_.size(); ++p) {
            const std::size_t t = active_[p];
            const double g = G_[t];
            double diff;
            if (y_[t] > 0) {
                if (lower(t)) continue;
                gmax2 = std::max(gmax2, g);
                diff = gmax + g;
            } else {
                if (upper(t)) continue;
                gmax2 = std::max(gmax2, -g);
                diff = gmax - g;
            }
            if (diff > 0) {
                double quad = qd_[i] + qd_[t] - 2.0 * y_[i] * y_[t] * Qi[idx(p)];
                if (quad <= 0) quad = kTau;
                const double obj = -(diff * diff) / quad;
                if (obj <= best) best = obj, j = t;
            }
        }
        viol = gmax + gmax2;
        if (viol < eps || j == kNone) return false;
        out_i = i;
        out_j = j;
        return true;
    }

    void step(std::size_t i, std::size_t j) {
        const Vector& Qj = row(j);
        const Vector& Qi = row(i);  // fetching row j may have evicted row i
        const double qij = Qi[idx(pos_[j])];
        const double C = C_;
        const double ai_old = alpha_[i], aj_old = alpha_[j];
        const bool ui = upper(i), uj = upper(j);
        double ai = ai_old, aj = aj_old;
        if (y_[i] != y_[j]) {
            double quad = qd_[i] + qd_[j] + 2.0 * qij;
            if (quad <= 0) quad = kTau;
            const double delta = (-G_[i] - G_[j]) / quad;
            const double diff = ai - aj;
            ai += delta;
            aj += delta;
            if (diff > 0) {
                if (aj < 0) aj = 0, ai = diff;
            } else if (ai < 0) {
                ai = 0, aj = -diff;
            }
            if (diff > 0) {
                if (ai > C) ai = C, aj = C - diff;
            } else if (aj > C) {
                aj = C, ai = C + diff;
            }
        } else {
            double quad = qd_[i] + qd_[j] - 2.0 * qij;
            if (quad <= 0) quad = kTau;
            const double delta = (G_[i] - G_[j]) / quad;
            const double sum = ai + aj;
            ai -= delta;
            aj += delta;
            if (sum > C) {
                if (ai > C) ai = C, aj = sum - C;
            } else if (aj < 0) {
                aj = 0, ai = sum;
            }
            if (sum > C) {
                if (aj > C) aj = C, ai = sum - C;
            } else if (ai < 0) {
                ai = 0, aj = sum;
            }
        }
        alpha_[i] = ai;
        alpha_[j] = aj;
        const double dai = ai - ai_old, daj = aj - aj_old;
        for (std::size_t p = 0; p < active_.size(); ++p) G_[active_[p]] += Qi[idx(p)] * dai + Qj[idx(p)] * daj;
        update_g_bar(i, ui);
        update_g_bar(j, uj);
    }

    void update_g_bar(std::size_t t, bool was_upper) {
        if (was_upper == upper(t)) return;
        const Vector r = full_row(t);
        const double s = was_upper ? -C_ : C_;
        for (std::size_t k = 0; k < n_; ++k) G_bar_[k] += s * r[idx(k)];
    }

    bool be_shrunk(std::size_t t, double gmax1, double gmax2) const {
        if (upper(t)) return y_[t] > 0 ? -G_[t] > gmax1 : -G_[t] > gmax2;
        if (lower(t)) return y_[t] > 0 ? G_[t] > gmax2 : G_[t] > gmax1;
        return false;
    }

    void shrink(double eps, bool& unshrunk) {
        double gmax1 = -std::numeric_limits<double>::infinity();
        double gmax2 = gmax1;
        for (std::size_t t : active_) {
            if (y_[t] > 0) {
                if (!upper(t)) gmax1 = std::max(gmax1, -G_[t]);
                if (!lower(t)) gmax2 = std::max(gmax2, G_[t]);
            } else {
                if (!upper(t)) gmax2 = std::max(gmax2, -G_[t]);
                if (!lower(t)) gmax1 = std::max(gmax1, G_[t]);
            }
        }
        if (!unshrunk && gmax1 + gmax2 <= eps * 10) {
            unshrunk = true;
            reconstruct_gradient();
            restore_all();
        }
        std::vector<std::size_t> keep;
        keep.reserve(active_.size());
        for (std::size_t t : active_)
            if (!be_shrunk(t, gmax1, gmax2)) keep.push_back(t);
        if (keep.size() != active_.size() && !keep.empty()) set_active(std::move(keep));
    }

    // Recomputes G for inactive variables from G_bar and the free alphas.
    void reconstruct_gradient() {
        if (active_.size() == n_) return;
        std::vector<std::size_t> inactive;
        for (std::size_t t = 0; t < n_; ++t)
            if (pos_[t] == kNone) inactive.push_back(t);
        for (std::size_t t : inactive) G_[t] = G_bar_[t] - 1.0;
        for (std::size_t i = 0; i < n_; ++i) {
            if (upper(i) || lower(i)) continue;
            const Vector r = full_row(i);
            for (std::size_t t : inactive) G_[t] += alpha_[i] * r[idx(t)];
        }
    }

    static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

    const Matrix& X_;
    Eigen::MatrixXd Xc_{X_};  // column-major copy
    KernelSpec spec_;
    double C_;
    std::size_t n_;
    std::vector<double> y_;
    Vector sq_;
    std::vector<double> qd_;
    std::vector<double> alpha_, G_, G_bar_;

    std::vector<std::size_t> active_, pos_;
    Eigen::MatrixXd X_active_;
    Vector sq_active_, y_active_, yv_;
    std::size_t cache_bytes_ = 0;
    std::size_t capacity_ = 2;
    std::list<std::size_t> lru_;
    std::vector<std::list<std::size_t>::iterator> slots_;
    std::vector<Vector> rows_;
};

}  // namespace

KernelSvm KernelSvm::fit(const Matrix& X_in, std::span<const int> labels, const KernelSvmConfig& cfg,
                         std::span<const double> start) {
    const auto n = static_cast<std::size_t>(X_in.rows());
    require(labels.size() == n, "label count must equal row count");
    if (!start.empty()) {
        require(start.size() == n, "warm-start alpha needs one entry per row");
        double balance = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            require(start[i] >= 0.0 && start[i] <= cfg.C, "warm-start alpha must lie in [0, C]");
            balance += labels[i] * start[i];
            scale += start[i];
        }
        require(std::abs(balance) <= 1e-9 * std::max(1.0, scale), "warm-start alpha violates sum(y * alpha) = 0");
    }
    require(cfg.C > 0.0, "SVM cost C must be > 0");
    require(X_in.allFinite(), "SVM training data contain NaN or Inf");
    std::size_t pos = 0, neg = 0;
    for (int l : labels) {
        require(l == 1 || l == -1, "SVM labels must be +1 or -1");
        (l == 1 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) fail(ErrorKind::InvalidArgument, "single-class training set: the rejector needs both labels");

    KernelSvm m;
    m.cfg_ = cfg;
    Matrix X = X_in;
    if (cfg.standardize) {
        IndexList all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        m.scaler_ = data::fit_scaler(X, all);
        m.scaler_->transform(X);
    }
    const auto d = static_cast<std::size_t>(X.cols());
    m.bandwidth_ = cfg.bandwidth.value_or(std::sqrt(static_cast<double>(d) / 2.0));
    require(m.bandwidth_ > 0.0, "SVM bandwidth must be > 0");
    const KernelSpec spec = make_spec(cfg, m.bandwidth_, d);

    Solver solver(X, labels, spec, cfg.C, cfg.cache_bytes, start);
    const std::size_t max_iter = cfg.max_iterations ? cfg.max_iterations : std::max<std::size_t>(1'000'000, 100 * n);
    m.stats_ = solver.run(cfg.tolerance, max_iter);
    const auto& alpha = solver.alpha();
    const auto& G = solver.gradient();
    std::vector<double> y(labels.begin(), labels.end());

    // Bias from free variables, or the midpoint of the feasible interval.
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = y[t] * G[t];
        if (alpha[t] >= cfg.C) {
            if (y[t] < 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (alpha[t] <= 0.0) {
            if (y[t] > 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            ++n_free;
            sum_free += yg;
        }
    }
    const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

    std::vector<std::size_t> sv;
    for (std::size_t t = 0; t < n; ++t)
        if (alpha[t] > 0.0) sv.push_back(t);
    m.support_ = select_rows(X, sv);
    m.coef_.resize(static_cast<Eigen::Index>(sv.size()));
    for (std::size_t k = 0; k < sv.size(); ++k) m.coef_[static_cast<Eigen::Index>(k)] = y[sv[k]] * alpha[sv[k]];
    m.alphas_ = Eigen::Map<const Vector>(alpha.data(), static_cast<Eigen::Index>(n));
    m.bias_ = -rho;
    return m;
}

double KernelSvm::kernel(std::span<const double> a, std::span<const double> b) const {
    const auto va = as_vector(a), vb = as_vector(b);
    const KernelSpec spec = make_spec(cfg_, bandwidth_, a.size());
    return spec.apply_dot(va.dot(vb), va.squaredNorm(), vb.squaredNorm());
}

double KernelSvm::decision(std::span<const double> x) const {
    require(x.size() == static_cast<std::size_t>(support_.cols()) || support_.rows() == 0, "SVM input dimension mismatch");
    std::vector<double> scaled = scaler_ ? scaler_->transform(x) : std::vector<double>(x.begin(), x.end());
    double acc = bias_;
    for (Eigen::Index k = 0; k < support_.rows(); ++k) acc += coef_[k] * kernel(row_span(support_, k), scaled);
    return acc;
}

void KernelSvm::decision_batch(const Matrix& X_in, Vector& out) const {
    Matrix X = X_in;
    if (scaler_) scaler_->transform(X);
    require(X.cols() == support_.cols(), "SVM input dimension mismatch");
    const KernelSpec spec = make_spec(cfg_, bandwidth_, static_cast<std::size_t>(X.cols()));
    Eigen::MatrixXd dots = X * support_.transpose();
    const Vector sqx = X.rowwise().squaredNorm();
    const Vector sqs = support_.rowwise().squaredNorm();
    for (Eigen::Index r = 0; r < dots.rows(); ++r)
        for (Eigen::Index c = 0; c < dots.cols(); ++c) dots(r, c) = spec.apply_dot(dots(r, c), sqx[r], sqs[c]);
    out = dots * coef_;
    out.array() += bias_;
}

void to_json(nlohmann::json& j, const KernelSvm& m) {
    j = nlohmann::json{{"config", m.cfg_}, {"bandwidth", m.bandwidth_}, {"bias", m.bias_}};
    j["dual_coefficients"] = std::vector<double>(m.coef_.begin(), m.coef_.end());
    auto sv = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.support_.rows(); ++r) {
        auto row = row_span(m.support_, r);
        sv.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["support_vectors"] = std::move(sv);
    if (m.scaler_) j["scaler"] = *m.scaler_;
}

void from_json(const nlohmann::json& j, KernelSvm& m) {
    m = KernelSvm();
    m.cfg_ = j.at("config").get<KernelSvmConfig>();
    m.bandwidth_ = j.at("bandwidth").get<double>();
    m.bias_ = j.at("bias").get<double>();
    auto coef = j.at("dual_coefficients").get<std::vector<double>>();
    m.coef_ = Eigen::Map<Vector>(coef.data(), static_cast<Eigen::Index>(coef.size()));
    const auto& sv = j.at("support_vectors");
    const auto d = sv.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(sv[0].size());
    m.support_.resize(static_cast<Eigen::Index>(sv.size()), d);
    for (std::size_t r = 0; r < sv.size(); ++r) {
        auto row = sv[r].get<std::vector<double>>();
        require(static_cast<Eigen::Index>(row.size()) == d, "ragged support vectors in SVM JSON");
        for (Eigen::Index c = 0; c < d; ++c) m.support_(static_cast<Eigen::Index>(r), c) = row[static_cast<std::size_t>(c)];
    }
    require(m.coef_.size() == m.support_.rows(), "SVM JSON: coefficient count differs from support vector count");
    if (j.contains("scaler")) m.scaler_ = j["scaler"].get<data::Scaler>();
}

}  // namespace ltx::svm

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltx/explain.hpp"

#include <nlohmann/json.hpp>

#include <numeric>

using namespace ltx;
using explain::BatchModel;

namespace {

Matrix random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> N(0, 1);
    Matrix X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = N(rng);
    return X;
}

BatchModel pointwise(std::function<double(const Eigen::RowVectorXd&)> g) {
    return [g](const Matrix& rows, Vector& out) {
        out.resize(rows.rows());
        for (Eigen::Index i = 0; i < rows.rows(); ++i) out[i] = g(rows.row(i));
    };
}

// Shapley value of player j for a cooperative game given as a table over bitmasks.
double brute_shapley(const std::vector<double>& v, std::size_t d, std::size_t j) {
    double phi = 0;
    auto fact = [](std::size_t k) { return std::tgamma(static_cast<double>(k) + 1); };
    for (std::size_t s = 0; s < (std::size_t{1} << d); ++s) {
        if (s >> j & 1U) continue;
        const auto size = static_cast<std::size_t>(__builtin_popcountll(s));
        phi += fact(size) * fact(d - size - 1) / fact(d) * (v[s | (std::size_t{1} << j)] - v[s]);
    }
    return phi;
}

}  // namespace

TEST_CASE("Shapley kernel weights") {
    CHECK(explain::shapley_kernel_weight(4, 1) == doctest::Approx(3.0 / (4 * 1 * 3)));
    CHECK(explain::shapley_kernel_weight(4, 2) == doctest::Approx(3.0 / (6 * 2 * 2)));
    CHECK(explain::shapley_kernel_weight(5, 1) == explain::shapley_kernel_weight(5, 4));
    CHECK_THROWS_AS(explain::shapley_kernel_weight(4, 0), Error);
}

TEST_CASE("full enumeration when the budget covers every coalition") {
    const auto c = explain::sample_coalitions(4, 14, 0);
    CHECK(c.size() == 14);
    std::set<std::vector<char>> distinct;
    for (const auto& x : c) {
        const auto size = static_cast<std::size_t>(std::count(x.members.begin(), x.members.end(), 1));
        CHECK(x.weight == doctest::Approx(explain::shapley_kernel_weight(4, size)));
        distinct.insert(x.members);
    }
    CHECK(distinct.size() == 14);
}

TEST_CASE("sampled coalitions are interior and deterministic") {
    const auto a = explain::sample_coalitions(10, 100, 3);
    const auto b = explain::sample_coalitions(10, 100, 3);
    REQUIRE(a.size() == b.size());
    CHECK(a.size() <= 100);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].members == b[i].members);
        const auto size = std::count(a[i].members.begin(), a[i].members.end(), 1);
        CHECK(size > 0);
        CHECK(size < 10);
        CHECK(a[i].weight > 0.0);
    }
}

TEST_CASE("exact Shapley matches brute-force game values") {
    const std::size_t d = 4;
    const Matrix bg = random_matrix(3, d, 1);
    const Vector xv = random_matrix(1, d, 2).row(0);
    const std::vector<double> x(xv.data(), xv.data() + d);
    auto g = [](const Eigen::RowVectorXd& r) { return r[0] * r[1] + std::sin(r[2]) - r[3] * r[3] * r[0]; };
    const auto f = pointwise(g);
    std::vector<double> v(1 << d);
    for (std::size_t s = 0; s < v.size(); ++s) {
        double acc = 0;
        for (Eigen::Index b = 0; b < bg.rows(); ++b) {
            Eigen::RowVectorXd r = bg.row(b);
            for (std::size_t j = 0; j < d; ++j)
                if (s >> j & 1U) r[static_cast<Eigen::Index>(j)] = x[j];
            acc += g(r);
        }
        v[s] = acc / static_cast<double>(bg.rows());
    }
    const auto e = explain::exact_shapley(f, x, bg);
    for (std::size_t j = 0; j < d; ++j) CHECK(e.relevance[static_cast<Eigen::Index>(j)] == doctest::Approx(brute_shapley(v, d, j)).epsilon(1e-12));
    CHECK(e.base_value == doctest::Approx(v[0]));
}

TEST_CASE("KernelSHAP with full enumeration equals exact Shapley") {
    const std::size_t d = 5;
    const Matrix bg = random_matrix(6, d, 3);
    const auto f = pointwise([](const Eigen::RowVectorXd& r) { return std::tanh(r[0] - r[1] * r[2]) + r[3] * r[4]; });
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Vector xv = random_matrix(1, d, 10 + s).row(0);
        const std::vector<double> x(xv.data(), xv.data() + d);
        const auto exact = explain::exact_shapley(f, x, bg);
        const auto ks = explain::kernel_shap(f, x, bg, {30, 100, s});
        CHECK((ks.relevance - exact.relevance).lpNorm<Eigen::Infinity>() < 1e-9);
    }
    // Two features: the two singletons are the whole design.
    const Matrix bg2 = random_matrix(4, 2, 7);
    const auto f2 = pointwise([](const Eigen::RowVectorXd& r) { return r[0] * r[1] + r[1]; });
    const std::vector<double> x2{0.3, -1.2};
    const auto ks2 = explain::kernel_shap(f2, x2, bg2, {2, 100, 0});
    CHECK((ks2.relevance - explain::exact_shapley(f2, x2, bg2).relevance).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK_THROWS_AS(explain::kernel_shap(f2, x2, bg2, {1, 100, 0}), Error);
}

TEST_CASE("sampled KernelSHAP satisfies efficiency") {
    const std::size_t d = 10;
    const Matrix bg = random_matrix(20, d, 4);
    const auto f = pointwise([](const Eigen::RowVectorXd& r) { return r.sum() + r[0] * r[1] * r[2]; });
    const Vector xv = random_matrix(1, d, 5).row(0);
    const std::vector<double> x(xv.data(), xv.data() + d);
    const auto e = explain::kernel_shap(f, x, bg, {200, 100, 1});
    Vector fx;
    Matrix one(1, d);
    one.row(0) = xv.transpose();
    f(one, fx);
    CHECK(e.relevance.sum() + e.base_value == doctest::Approx(fx[0]).epsilon(1e-9));
    const auto again = explain::kernel_shap(f, x, bg, {200, 100, 1});
    CHECK(again.relevance == e.relevance);
}

TEST_CASE("linear predictor closed form") {
    const Matrix X = random_matrix(50, 3, 6);
    Vector y = 2 * X.col(0) - X.col(2);
    const auto p = models::fit({models::PredictorKind::LinearRegression, 0.1, {}}, X, y);
    const Matrix bg = explain::make_background(X, 20, 1);
    const std::vector<double> x{0.5, -1.0, 2.0};
    const auto e = explain::kernel_shap(p, x, bg, {6, 20, 0});
    const Vector mu = bg.colwise().mean();
    for (int j = 0; j < 3; ++j) CHECK(e.relevance[j] == doctest::Approx(p.weights()[j] * (x[static_cast<std::size_t>(j)] - mu[j])).epsilon(1e-9));
}

TEST_CASE("background selection") {
    const Matrix X = random_matrix(30, 2, 7);
    CHECK(explain::make_background(X, 100, 0) == X);
    const Matrix a = explain::make_background(X, 10, 1);
    CHECK(a.rows() == 10);
    CHECK(a == explain::make_background(X, 10, 1));
}

TEST_CASE("reruns use consecutive seeds") {
    const Matrix bg = random_matrix(5, 12, 8);
    const auto f = pointwise([](const Eigen::RowVectorXd& r) { return r[0] * r[1] + r[5]; });
    const Vector xv = random_matrix(1, 12, 9).row(0);
    const std::vector<double> x(xv.data(), xv.data() + 12);
    const auto runs = explain::rerun_explanations(f, x, bg, {50, 10, 40}, 3);
    REQUIRE(runs.size() == 3);
    CHECK(runs[1].relevance == explain::kernel_shap(f, x, bg, {50, 10, 41}).relevance);
    explain::KernelShap k(bg, {50, 10, 40});
    CHECK(k.explain(f, x).relevance == runs[0].relevance);
}

TEST_CASE("explanation JSON round trip") {
    explain::Explanation e;
    e.relevance = Vector::LinSpaced(3, -1, 1);
    e.base_value = 0.25;
    e.instance_id = "r7";
    const auto back = nlohmann::json(e).get<explain::Explanation>();
    CHECK(back.relevance == e.relevance);
    CHECK(back.base_value == e.base_value);
    CHECK(back.instance_id == "r7");
}

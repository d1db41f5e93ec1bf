#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltx/quality.hpp"

using namespace ltx;
using namespace ltx::quality;

namespace {

BatchModel linear(Vector w) {
    return [w](const Matrix& rows, Vector& out) { out = rows * w; };
}

Matrix random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> N(0, 1);
    Matrix X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = N(rng);
    return X;
}

Explanation expl(std::vector<double> z) {
    Explanation e;
    e.relevance = Eigen::Map<const Vector>(z.data(), static_cast<Eigen::Index>(z.size()));
    return e;
}

}  // namespace

TEST_CASE("complexity bounds") {
    CHECK(complexity(expl({0, 0, 3, 0})) == 0.0);
    CHECK(complexity(expl({1, -1, 1, -1})) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    CHECK(complexity(expl({0, 0, 0})) == doctest::Approx(std::log(3.0)));
    CHECK(complexity(expl({0.5, 0.5, 0})) == doctest::Approx(std::log(2.0)));
    Rng rng(1);
    std::normal_distribution<double> N(0, 1);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> z(6);
        for (auto& v : z) v = N(rng);
        const double c = complexity(z);
        REQUIRE(c >= 0.0);
        REQUIRE(c <= std::log(6.0));
    }
}

TEST_CASE("harmonic mean identities") {
    CHECK(harmonic_mean(1, 1) == 1.0);
    CHECK(harmonic_mean(0, 1) == 0.0);
    CHECK(harmonic_mean(0, 0) == 0.0);
    CHECK(harmonic_mean(0.5, 0.25) == doctest::Approx(1.0 / 3.0));
    const auto r = faithfulness_from_raw(0.0, std::log(2.0));
    CHECK(r.sufficiency == 1.0);
    CHECK(r.necessity == doctest::Approx(0.5));
    CHECK(r.faithfulness == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("constant predictor has zero faithfulness") {
    const BatchModel f = [](const Matrix& rows, Vector& out) { out = Vector::Constant(rows.rows(), 0.7); };
    const Matrix bg = random_matrix(20, 3, 2);
    const std::vector<double> x{1, 2, 3};
    CHECK(faithfulness(f, x, expl({0.1, 0.2, 0.3}), bg) == 0.0);
}

TEST_CASE("faithfulness rewards correct attributions") {
    Vector w(4);
    w << 2, 0, 0, -1;
    const auto f = linear(w);
    const Matrix bg = random_matrix(50, 4, 3);
    const std::vector<double> x{1.5, 0.3, -0.2, -1.0};
    const double good = faithfulness(f, x, expl({3, 0, 0, 1}), bg);
    const double bad = faithfulness(f, x, expl({0, 1, 1, 0}), bg);
    CHECK(good > 0.5);
    CHECK(bad < 0.2);
    const auto r = faithfulness_report(f, x, expl({3, 0, 0, 1}), bg);
    CHECK(r.sufficiency_raw == 0.0);
    CHECK(r.faithfulness >= 0.0);
    CHECK(r.faithfulness <= 1.0);
}

TEST_CASE("faithfulness is monotone in necessity and sufficiency") {
    double prev = -1;
    for (double nec : {0.0, 0.1, 0.5, 1.0, 3.0}) {
        const double v = faithfulness_from_raw(0.2, nec).faithfulness;
        CHECK(v >= prev);
        prev = v;
    }
    prev = 2;
    for (double suf : {0.0, 0.1, 0.5, 1.0, 3.0}) {
        const double v = faithfulness_from_raw(suf, 1.0).faithfulness;
        CHECK(v <= prev);
        prev = v;
    }
}

TEST_CASE("stability is one for a deterministic explainer") {
    Vector w(3);
    w << 1, -2, 0.5;
    const auto f = linear(w);
    const Matrix bg = random_matrix(10, 3, 4);
    const std::vector<double> x{0.2, 0.4, -0.6};
    // Full enumeration makes every re-run identical.
    const explain::ExplainerConfig cfg{6, 10, 0};
    const auto z = explain::kernel_shap(f, x, bg, cfg);
    CHECK(stability(f, x, z, bg, cfg, 5) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("stability averages correlations") {
    const auto z = expl({1, 2, 3});
    const std::vector<Explanation> runs{expl({1, 2, 3}), expl({3, 2, 1})};
    CHECK(stability(z, runs) == doctest::Approx(0.0));
}

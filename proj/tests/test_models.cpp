#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltx/models.hpp"

#include <nlohmann/json.hpp>

using namespace ltx;
using models::PredictorKind;

namespace {

Matrix random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> N(0, 1);
    Matrix X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = N(rng);
    return X;
}

}  // namespace

TEST_CASE("ridge regression matches the augmented normal equations") {
    const Matrix X = random_matrix(80, 4, 1);
    Vector y(80);
    Rng rng(2);
    std::normal_distribution<double> N(0, 0.1);
    for (Eigen::Index i = 0; i < 80; ++i) y[i] = 1.5 * X(i, 0) - 2 * X(i, 2) + 0.7 + N(rng);
    const double l2 = 0.5;
    const auto p = models::fit({PredictorKind::LinearRegression, l2, {}}, X, y);

    // Oracle: minimize |y - Xw - b|^2 + l2 |w|^2 via the (d+1)x(d+1) system with an unpenalized intercept.
    Eigen::MatrixXd A(80, 5);
    A.leftCols(4) = X;
    A.col(4).setOnes();
    Eigen::MatrixXd M = A.transpose() * A;
    for (int j = 0; j < 4; ++j) M(j, j) += l2;
    const Eigen::VectorXd theta = M.colPivHouseholderQr().solve(A.transpose() * y);
    for (int j = 0; j < 4; ++j) CHECK(p.weights()[j] == doctest::Approx(theta[j]).epsilon(1e-10));
    CHECK(p.intercept() == doctest::Approx(theta[4]).epsilon(1e-10));
    const std::vector<double> x{0.1, 0.2, 0.3, 0.4};
    CHECK(p.predict(x) == doctest::Approx(theta.head(4).dot(Eigen::Vector4d(0.1, 0.2, 0.3, 0.4)) + theta[4]));
}

TEST_CASE("unregularized least squares on a rank-deficient design is refused") {
    Matrix X(10, 2);
    for (int i = 0; i < 10; ++i) X(i, 0) = X(i, 1) = i;
    Vector y = Vector::LinSpaced(10, 0, 9);
    CHECK_THROWS_AS(models::fit({PredictorKind::LinearRegression, 0.0, {}}, X, y), Error);
}

TEST_CASE("logistic regression reaches a stationary point") {
    const Matrix X = random_matrix(200, 3, 3);
    Vector y(200);
    Rng rng(4);
    std::uniform_real_distribution<double> U(0, 1);
    for (Eigen::Index i = 0; i < 200; ++i) y[i] = U(rng) < models::sigmoid(2 * X(i, 0) - X(i, 1)) ? 1 : 0;
    const double l2 = 1.0;
    const auto p = models::fit({PredictorKind::LogisticRegression, l2, {}}, X, y);
    // Oracle: gradient of the penalized log-likelihood vanishes.
    Vector gw = l2 * p.weights();
    double gb = 0;
    for (Eigen::Index i = 0; i < 200; ++i) {
        const double r = p.predict(row_span(X, i)) - y[i];
        gw += r * X.row(i).transpose();
        gb += r;
    }
    CHECK(gw.lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK(std::abs(gb) < 1e-6);
    CHECK(p.weights()[0] > 0.5);
    CHECK(p.weights()[1] < -0.2);
}

TEST_CASE("kernel ridge interpolates as l2 shrinks") {
    const Matrix X = random_matrix(30, 2, 5);
    Vector y(30);
    for (Eigen::Index i = 0; i < 30; ++i) y[i] = std::sin(X(i, 0)) + X(i, 1) * X(i, 1);
    const auto p = models::fit({PredictorKind::KernelRidge, 1e-8, 1.0}, X, y);
    for (Eigen::Index i = 0; i < 30; ++i) CHECK(p.predict(row_span(X, i)) == doctest::Approx(y[i]).epsilon(1e-4));
    // Closed form: alpha = (K + l2 I)^-1 (y - mean y).
    const auto q = models::fit({PredictorKind::KernelRidge, 0.3, 1.0}, X, y);
    Eigen::MatrixXd K = models::rbf_kernel(X, X, 1.0);
    K.diagonal().array() += 0.3;
    const Eigen::VectorXd alpha = K.ldlt().solve((y.array() - y.mean()).matrix());
    CHECK((q.weights() - alpha).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("rbf kernel entries") {
    Matrix A(2, 2);
    A << 0, 0, 1, 1;
    const Matrix K = models::rbf_kernel(A, A, 2.0);
    CHECK(K(0, 0) == doctest::Approx(1.0));
    CHECK(K(0, 1) == doctest::Approx(std::exp(-2.0 / 8.0)));
    CHECK(K(1, 0) == doctest::Approx(K(0, 1)));
}

TEST_CASE("kernel logistic separates a circle a linear model cannot") {
    const Matrix X = random_matrix(300, 2, 6);
    Vector y(300);
    for (Eigen::Index i = 0; i < 300; ++i) y[i] = X.row(i).squaredNorm() > 1.4 ? 1 : 0;
    const auto k = models::fit({PredictorKind::KernelLogistic, 0.01, {}}, X, y, 1);
    const auto l = models::fit({PredictorKind::LogisticRegression, 1.0, {}}, X, y);
    int ck = 0, cl = 0;
    for (Eigen::Index i = 0; i < 300; ++i) {
        ck += (k.predict(row_span(X, i)) >= 0.5) == (y[i] == 1);
        cl += (l.predict(row_span(X, i)) >= 0.5) == (y[i] == 1);
    }
    CHECK(ck > 270);
    CHECK(cl < 230);
    for (Eigen::Index i = 0; i < 300; ++i) {
        const double v = k.predict(row_span(X, i));
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("batch prediction agrees with single prediction") {
    const Matrix X = random_matrix(50, 3, 7);
    Vector y(50);
    for (Eigen::Index i = 0; i < 50; ++i) y[i] = X(i, 0) > 0 ? 1 : 0;
    for (auto kind : {PredictorKind::LogisticRegression, PredictorKind::KernelLogistic}) {
        const auto p = models::fit({kind, 1.0, {}}, X, y, 3);
        Vector out;
        p.predict_batch(X, out);
        for (Eigen::Index i = 0; i < 50; ++i) CHECK(out[i] == doctest::Approx(p.predict(row_span(X, i))).epsilon(1e-12));
    }
}

TEST_CASE("predictor JSON round trip") {
    const Matrix X = random_matrix(40, 3, 8);
    Vector y = X.col(0) + 0.5 * X.col(1);
    for (auto kind : {PredictorKind::LinearRegression, PredictorKind::KernelRidge}) {
        const auto p = models::fit({kind, 0.5, {}}, X, y, 2);
        const auto q = nlohmann::json(p).get<models::Predictor>();
        CHECK(q.kind() == p.kind());
        for (Eigen::Index i = 0; i < 40; ++i) CHECK(q.predict(row_span(X, i)) == p.predict(row_span(X, i)));
    }
}

TEST_CASE("predictor kind names") {
    for (auto kind : {PredictorKind::LinearRegression, PredictorKind::LogisticRegression, PredictorKind::KernelRidge,
                      PredictorKind::KernelLogistic})
        CHECK(models::predictor_kind_from_string(models::to_string(kind)) == kind);
    CHECK_THROWS_AS(models::predictor_kind_from_string("forest"), Error);
}

TEST_CASE("median pairwise distance of a known configuration") {
    Matrix X(3, 1);
    X << 0, 1, 3;
    CHECK(models::median_pairwise_distance(X, 0) == doctest::Approx(2.0));
}

TEST_CASE("bootstrap ensemble variance is population variance of members") {
    const Matrix X = random_matrix(60, 2, 9);
    Vector y = X.col(0);
    const auto e = models::BootstrapEnsemble::fit({PredictorKind::LinearRegression, 1.0, {}}, X, y, 5, 11);
    REQUIRE(e.members().size() == 5);
    const std::vector<double> x{0.3, -1.0};
    std::vector<double> preds;
    for (const auto& m : e.members()) preds.push_back(m.predict(x));
    const double s = population_std(preds);
    CHECK(e.predictive_variance(x) == doctest::Approx(s * s).epsilon(1e-12));
    CHECK(e.predictive_variance(x) > 0.0);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltx/quality.hpp"
#include "ltx/reject.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>

using namespace ltx;
using namespace ltx::reject;

namespace {

JudgedExplanation judged(std::vector<double> z, int label, IndexList wrong, std::string id = {}) {
    JudgedExplanation j;
    j.explanation.relevance = Eigen::Map<const Vector>(z.data(), static_cast<Eigen::Index>(z.size()));
    j.explanation.instance_id = std::move(id);
    j.label = label;
    j.wrong_set = std::move(wrong);
    return j;
}

// High quality: mass on feature 0. Low quality: mass on feature 2.
std::vector<JudgedExplanation> toy_set(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> N(0, 0.3);
    std::vector<JudgedExplanation> out;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = i % 3 == 0 ? 0 : 1;
        std::vector<double> z{N(rng), N(rng), N(rng), N(rng)};
        (label ? z[0] : z[2]) += 1.5;
        out.push_back(judged(z, label, label ? IndexList{3} : IndexList{2}, "r" + std::to_string(i)));
    }
    return out;
}

std::vector<Context> keyed(const std::vector<JudgedExplanation>& js) {
    std::vector<Context> c(js.size());
    for (std::size_t i = 0; i < js.size(); ++i) c[i].key = hash_string(js[i].explanation.instance_id);
    return c;
}

}  // namespace

TEST_CASE("augmentation mask follows the label") {
    const auto hi = judged({1, 2, 3, 4}, 1, {1, 3});
    const auto lo = judged({1, 2, 3, 4}, 0, {1, 3});
    CHECK(augmentation_mask(hi) == std::vector<char>{0, 1, 0, 1});
    CHECK(augmentation_mask(lo) == std::vector<char>{1, 0, 1, 0});
}

TEST_CASE("augmentation keeps unmasked entries and labels") {
    const auto j = judged({1, 2, 3, 4}, 1, {2});
    const std::vector<double> sigma{1, 1, 1, 1};
    AugmentationConfig cfg;
    cfg.k = 50;
    cfg.epsilon0 = 0.5;
    cfg.seed = 3;
    const auto copies = augment(j, sigma, cfg);
    REQUIRE(copies.size() == 50);
    bool moved = false;
    for (const auto& c : copies) {
        CHECK(c.label == 1);
        CHECK(c.wrong_set == j.wrong_set);
        CHECK(c.explanation.relevance[0] == 1.0);
        CHECK(c.explanation.relevance[1] == 2.0);
        CHECK(c.explanation.relevance[3] == 4.0);
        moved = moved || c.explanation.relevance[2] != 3.0;
    }
    CHECK(moved);
    cfg.epsilon0 = 0;
    for (const auto& c : augment(j, sigma, cfg)) CHECK(c.explanation.relevance == j.explanation.relevance);
}

TEST_CASE("augmentation noise scale") {
    const auto j = judged({0, 0}, 0, {});
    const std::vector<double> sigma{2.0, 0.5};
    AugmentationConfig cfg;
    cfg.k = 20000;
    cfg.epsilon0 = 0.5;
    for (bool variance : {true, false}) {
        cfg.sigma_as_variance = variance;
        const auto copies = augment(j, sigma, cfg);
        for (int f = 0; f < 2; ++f) {
            std::vector<double> v;
            for (const auto& c : copies) v.push_back(c.explanation.relevance[f]);
            const double scale = 0.5 * sigma[static_cast<std::size_t>(f)];
            const double expected = variance ? std::sqrt(scale) : scale;
            CHECK(population_std(v) == doctest::Approx(expected).epsilon(0.03));
            CHECK(std::abs(mean(v)) < 4 * expected / std::sqrt(20000.0));
        }
    }
}

TEST_CASE("relevance std is per feature") {
    const std::vector<JudgedExplanation> js{judged({0, 1}, 1, {}), judged({2, 1}, 0, {})};
    const auto s = relevance_std(js);
    CHECK(s[0] == 1.0);
    CHECK(s[1] == 0.0);
}

TEST_CASE("threshold calibration") {
    const std::vector<double> s{4, 1, 3, 2};
    CHECK(calibrate_threshold(s, 0.5) == 3.0);
    CHECK(calibrate_threshold(s, 0.0) == 1.0);
    CHECK(std::isinf(calibrate_threshold(s, 1.0)));
    CHECK(calibrate_threshold(s, CalibrationStrategy::match_low_quality_fraction(0.5)) == 3.0);
    // Rounding: 0.125 * 4 = 0.5 rounds up to one rejection.
    CHECK(calibrate_threshold(s, 0.125) == 2.0);
    CHECK_THROWS_AS(calibrate_threshold(s, 1.5), Error);
    CHECK_THROWS_AS(calibrate_threshold(std::vector<double>{}, 0.1), Error);
}

TEST_CASE("decisions accept a score equal to the threshold") {
    auto train = toy_set(30, 1);
    RejectorParams p;
    p.kind = RejectorKind::ComplRej;
    auto r = Rejector::fit(p, train, keyed(train));
    CHECK_THROWS_AS(r.threshold(), Error);
    const double s = r.score(train[0].explanation, {});
    r.set_threshold(s);
    CHECK_FALSE(r.decide(train[0].explanation, {}).rejected);
    r.set_threshold(std::nextafter(s, std::numeric_limits<double>::infinity()));
    CHECK(r.decide(train[0].explanation, {}).rejected);
}

TEST_CASE("ULER separates the toy problem") {
    const auto train = toy_set(90, 2), test = toy_set(60, 3);
    for (auto kind : {RejectorKind::Uler, RejectorKind::UlerNoAug, RejectorKind::PastaRejLite, RejectorKind::NovRejZ}) {
        CAPTURE(to_string(kind));
        RejectorParams p;
        p.kind = kind;
        p.augmentation.k = 3;
        const auto r = Rejector::fit(p, train, keyed(train));
        std::vector<explain::Explanation> zs;
        for (const auto& j : test) zs.push_back(j.explanation);
        const auto scores = r.score_batch(zs, keyed(test));
        double hi = 0, lo = 0;
        for (std::size_t i = 0; i < test.size(); ++i) (test[i].label ? hi : lo) += scores[i];
        if (kind != RejectorKind::NovRejZ) CHECK(hi / 40 > lo / 20);
        for (std::size_t i = 0; i < test.size(); ++i) CHECK(scores[i] == doctest::Approx(r.score(zs[i], keyed(test)[i])).epsilon(1e-10));
    }
}

TEST_CASE("ULER needs both labels") {
    std::vector<JudgedExplanation> one{judged({1, 0}, 1, {}), judged({0, 1}, 1, {})};
    RejectorParams p;
    CHECK_THROWS_AS(Rejector::fit(p, one, keyed(one)), Error);
}

TEST_CASE("side-information rejectors read the context") {
    const auto train = toy_set(12, 4);
    std::vector<Context> ctx = keyed(train);
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        ctx[i].instance = Vector::Constant(2, static_cast<double>(i));
        ctx[i].prediction = 0.9;
        ctx[i].predictive_variance = 0.25;
        ctx[i].stability = 0.6;
        ctx[i].faithfulness = 0.7;
    }
    RejectorParams p;
    p.kind = RejectorKind::PredAmb;
    CHECK(Rejector::fit(p, train, ctx).score(train[0].explanation, ctx[0]) == doctest::Approx(0.8));
    p.task = Task::Regression;
    CHECK(Rejector::fit(p, train, ctx).score(train[0].explanation, ctx[0]) == doctest::Approx(0.8));
    p.kind = RejectorKind::StabRej;
    CHECK(Rejector::fit(p, train, ctx).score(train[0].explanation, ctx[0]) == 0.6);
    p.kind = RejectorKind::FaithRej;
    CHECK(Rejector::fit(p, train, ctx).score(train[0].explanation, ctx[0]) == 0.7);
    CHECK_THROWS_AS(Rejector::fit(p, train, ctx).score(train[0].explanation, Context{}), Error);
    p.kind = RejectorKind::NovRejX;
    p.k_nn = 2;
    Context q;
    q.instance = Vector::Constant(2, 3.0);
    // Distances 0, sqrt(2), sqrt(2), ... -> the second nearest is sqrt(2).
    CHECK(Rejector::fit(p, train, ctx).score(train[0].explanation, q) == doctest::Approx(1.0 / (1.0 + std::sqrt(2.0))));
    p.kind = RejectorKind::UlerZXY;
    p.augmentation.k = 2;
    const auto r = Rejector::fit(p, train, ctx);
    CHECK(std::isfinite(r.score(train[0].explanation, ctx[0])));
    CHECK_THROWS_AS(r.score(train[0].explanation, Context{}), Error);
}

TEST_CASE("complexity rejector scores") {
    RejectorParams p;
    p.kind = RejectorKind::ComplRej;
    const auto train = toy_set(6, 5);
    const auto r = Rejector::fit(p, train, keyed(train));
    const auto z = judged({1, 1, 0, 0}, 1, {}).explanation;
    CHECK(r.score(z, {}) == doctest::Approx(1.0 / (1.0 + std::log(2.0))));
}

TEST_CASE("random rejector is keyed, not positional") {
    RejectorParams p;
    p.kind = RejectorKind::RandRej;
    p.seed = 9;
    const auto train = toy_set(6, 6);
    const auto r = Rejector::fit(p, train, keyed(train));
    Context a, b;
    a.key = 1;
    b.key = 2;
    CHECK(r.score(train[0].explanation, a) == r.score(train[1].explanation, a));
    CHECK(r.score(train[0].explanation, a) != r.score(train[0].explanation, b));
}

TEST_CASE("kth neighbour distance") {
    Matrix ref(3, 1);
    ref << 0, 2, 5;
    const std::vector<double> q{1};
    CHECK(kth_neighbor_distance(ref, q, 1) == 1.0);
    CHECK(kth_neighbor_distance(ref, q, 3) == 4.0);
    CHECK(kth_neighbor_distance(ref, q, 10) == 4.0);
}

TEST_CASE("kind names round trip and unknown names list the valid ones") {
    for (auto k : all_rejector_kinds()) CHECK(rejector_kind_from_string(to_string(k)) == k);
    CHECK(all_rejector_kinds().size() == 13);
    try {
        rejector_kind_from_string("Oracle");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("ULER_NoAug") != std::string::npos);
    }
}

TEST_CASE("describe renders tuned hyperparameters") {
    RejectorParams p;
    p.svm.kernel = svm::KernelType::Polynomial;
    p.svm.C = 10;
    p.augmentation.k = 5;
    p.augmentation.epsilon0 = 0.1;
    CHECK(p.describe() == "kernel=polynomial;C=10;k=5;epsilon0=0.1");
    p.kind = RejectorKind::UlerNoAug;
    CHECK(p.describe() == "kernel=polynomial;C=10");
    p.kind = RejectorKind::NovRejZ;
    p.k_nn = 5;
    CHECK(p.describe() == "k_nn=5");
    p.kind = RejectorKind::RandRej;
    CHECK(p.describe() == "-");
}

TEST_CASE("rejector JSON round trip keeps scores and threshold") {
    const auto train = toy_set(40, 7);
    RejectorParams p;
    p.augmentation.k = 2;
    auto r = Rejector::fit(p, train, keyed(train));
    std::vector<double> scores;
    for (const auto& j : train) scores.push_back(r.score(j.explanation, {}));
    r.calibrate(scores, CalibrationStrategy::target_rate(0.25));
    const auto back = nlohmann::json(r).get<Rejector>();
    CHECK(back.threshold() == r.threshold());
    for (const auto& j : train) CHECK(back.score(j.explanation, {}) == r.score(j.explanation, {}));
    r.set_threshold(std::numeric_limits<double>::infinity());
    CHECK(std::isinf(nlohmann::json(r).get<Rejector>().threshold()));
}

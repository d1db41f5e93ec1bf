#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltx/feedback.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace ltx;
using namespace ltx::feedback;

namespace {

Explanation make(std::initializer_list<double> z, std::string id = {}) {
    Explanation e;
    e.relevance = Eigen::Map<const Vector>(z.begin(), static_cast<Eigen::Index>(z.size()));
    e.instance_id = std::move(id);
    return e;
}

AnnotationRecord rec(std::string e, std::string a, int r, IndexList flags, bool pass = true) {
    return {std::move(e), std::move(a), r, std::move(flags), pass};
}

}  // namespace

TEST_CASE("pearson correlation") {
    const std::vector<double> a{1, 2, 3}, b{2, 4, 6}, c{3, 2, 1}, k{5, 5, 5};
    CHECK(pearson(a, b) == doctest::Approx(1.0));
    CHECK(pearson(a, c) == doctest::Approx(-1.0));
    CHECK(pearson(a, k) == 0.0);
}

TEST_CASE("wrong prefix picks the largest differences first") {
    const std::vector<double> d{0.1, 0.5, 0.3, 0.1};
    CHECK(wrong_prefix(d, 0.5) == IndexList{1});
    CHECK(wrong_prefix(d, 0.6) == IndexList{1, 2});
    CHECK(wrong_prefix(d, 0.8) == IndexList{1, 2});
    CHECK(wrong_prefix(d, 0.81) == IndexList{0, 1, 2});
    CHECK(wrong_prefix(d, 0.0).empty());
}

TEST_CASE("simulated judgment follows correlation threshold") {
    const auto z = make({1.0, 0.5, -0.2, 0.0});
    const auto good = simulate_judgment(z, make({0.9, 0.6, -0.1, 0.05}));
    CHECK(good.label == 1);
    const auto bad = simulate_judgment(z, make({-1.0, 0.4, 0.3, 0.8}));
    CHECK(bad.label == 0);
    const auto same = simulate_judgment(z, z);
    CHECK(same.label == 1);
    CHECK(same.wrong_set.empty());
}

TEST_CASE("low-quality wrong set covers u% of the total difference") {
    const auto z = make({1.0, 0.0, 0.0, 0.0});
    const auto o = make({0.0, 1.0, 0.2, 0.1});
    const auto j = simulate_judgment(z, o);
    REQUIRE(j.label == 0);
    // |diff| = {1, 1, 0.2, 0.1}; 0.75 * 2.3 = 1.725 needs both unit entries.
    CHECK(j.wrong_set == IndexList{0, 1});
    CHECK(j.correct_set() == IndexList{2, 3});
}

TEST_CASE("judgment defaults") {
    const JudgmentConfig cfg;
    CHECK(cfg.tau_z == 0.25);
    CHECK(cfg.u_pct == 0.75);
    CHECK_THROWS_AS(simulate_judgment(make({1, 2}), make({1, 2, 3})), Error);
}

TEST_CASE("annotation filters") {
    const std::vector<Explanation> ex{make({1, 0, 0}, "x"), make({0, 1, 0}, "y"), make({0, 0, 1}, "w")};
    std::vector<AnnotationRecord> r{
        rec("x", "good1", 4, {0}),       rec("y", "good1", 2, {1, 2}),    rec("w", "good1", 5, {}),
        rec("x", "good2", 5, {0, 2}),    rec("y", "good2", 1, {1}),       rec("w", "good2", 1, {}),
        rec("x", "flat", 3, {1}),        rec("y", "flat", 3, {1}),        rec("w", "flat", 3, {1}),
        rec("x", "quiet", 1, {}),        rec("y", "quiet", 5, {}),        rec("w", "quiet", 2, {}),
        rec("x", "asleep", 2, {0}, false), rec("y", "asleep", 4, {2}),    rec("w", "asleep", 3, {0}),
    };
    const auto res = aggregate_annotations(r, ex);
    REQUIRE(res.report.annotators.size() == 3);
    std::map<std::string, std::string> why;
    for (const auto& a : res.report.annotators) why[a.id] = a.reason;
    CHECK(why["flat"] == "all-identical-ratings");
    CHECK(why["quiet"] == "no-flagged-features");
    CHECK(why["asleep"] == "failed-attention-check");
    // w: ratings {5, 1} -> population sd 2.
    REQUIRE(res.report.explanations.size() == 1);
    CHECK(res.report.explanations[0].id == "w");
    CHECK(res.report.explanations[0].reason == "rating stddev > 1.25");
    REQUIRE(res.judged.size() == 2);
    CHECK(res.judged[0].explanation.instance_id == "x");
    CHECK(res.judged[0].label == 1);
    CHECK(res.judged[0].wrong_set == IndexList{0});
    CHECK(res.judged[1].label == 0);
    CHECK(res.judged[1].wrong_set == IndexList{1});
}

TEST_CASE("mean rating of exactly three is high quality") {
    const std::vector<Explanation> ex{make({1, 0}, "a"), make({0, 1}, "b")};
    std::vector<AnnotationRecord> r{rec("a", "p", 3, {0}), rec("a", "q", 3, {}), rec("b", "p", 2, {}),
                                    rec("b", "q", 4, {1})};
    const auto res = aggregate_annotations(r, ex);
    REQUIRE(res.judged.size() == 2);
    CHECK(res.judged[0].label == 1);
    CHECK(res.judged[0].wrong_set.empty());  // 1 of 2 is not a majority
}

TEST_CASE("unknown explanation ids are listed") {
    const std::vector<Explanation> ex{make({1, 0}, "a")};
    std::vector<AnnotationRecord> r{rec("a", "p", 3, {0}), rec("zz", "p", 2, {}), rec("yy", "q", 2, {})};
    try {
        aggregate_annotations(r, ex);
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("yy") != std::string::npos);
        CHECK(msg.find("zz") != std::string::npos);
    }
}

TEST_CASE("aggregation is independent of record order") {
    const std::vector<Explanation> ex{make({1, 0, 0}, "x"), make({0, 1, 0}, "y")};
    std::vector<AnnotationRecord> r{rec("x", "p", 4, {0}), rec("y", "p", 2, {1}), rec("x", "q", 5, {0}),
                                    rec("y", "q", 1, {2, 1})};
    const auto a = aggregate_annotations(r, ex);
    std::reverse(r.begin(), r.end());
    const auto b = aggregate_annotations(r, ex);
    REQUIRE(a.judged.size() == b.judged.size());
    for (std::size_t i = 0; i < a.judged.size(); ++i) {
        CHECK(a.judged[i].label == b.judged[i].label);
        CHECK(a.judged[i].wrong_set == b.judged[i].wrong_set);
    }
}

TEST_CASE("index set text format") {
    CHECK(parse_index_set("3;1;1") == IndexList{1, 3});
    CHECK(parse_index_set("").empty());
    CHECK(format_index_set({0, 4}) == "0;4");
    CHECK_THROWS_AS(parse_index_set("a"), Error);
}

TEST_CASE("judged CSV round trip") {
    std::vector<JudgedExplanation> js(2);
    js[0].explanation = make({0.1, -0.25, 1.0 / 3.0}, "r0");
    js[0].label = 0;
    js[0].wrong_set = {0, 2};
    js[1].explanation = make({1, 2, 3}, "r1");
    std::stringstream buf;
    write_judged_csv(buf, js, "# generated\n");
    const auto back = read_judged_csv(buf);
    REQUIRE(back.size() == 2);
    CHECK(back[0].explanation.relevance == js[0].explanation.relevance);
    CHECK(back[0].wrong_set == js[0].wrong_set);
    CHECK(back[0].label == 0);
    CHECK(back[1].explanation.instance_id == "r1");
}

TEST_CASE("annotation CSV validation") {
    std::istringstream bad("explanation_id,annotator_id,rating,flagged_features,attention_pass\ne,a,7,,1\n");
    CHECK_THROWS_AS(read_annotations_csv(bad), Error);
    std::istringstream missing("explanation_id,annotator_id,rating\ne,a,3\n");
    CHECK_THROWS_AS(read_annotations_csv(missing), Error);
}

TEST_CASE("fixture files aggregate as designed") {
    std::ifstream a(LTX_FIXTURES "/annotations.csv"), e(LTX_FIXTURES "/explanations.csv");
    REQUIRE(a);
    REQUIRE(e);
    const auto res = aggregate_annotations(read_annotations_csv(a), read_explanations_csv(e));
    CHECK(res.report.annotators.size() == 3);
    CHECK(res.report.explanations.size() == 1);
    CHECK(res.judged.size() == 4);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltx/common.hpp"
#include "ltx/csv.hpp"
#include "ltx/data.hpp"

#include <nlohmann/json.hpp>

#include <set>
#include <sstream>

using namespace ltx;

TEST_CASE("derive_seed is order sensitive and deterministic") {
    CHECK(derive_seed({1, 2}) == derive_seed({1, 2}));
    CHECK(derive_seed({1, 2}) != derive_seed({2, 1}));
    CHECK(derive_seed({1}) != derive_seed({1, 0}));
    CHECK(hash_string("abc") == hash_string("abc"));
    CHECK(hash_string("abc") != hash_string("abd"));
}

TEST_CASE("hex64 and provenance line") {
    CHECK(hex64(0) == "0000000000000000");
    CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
    const auto line = provenance_line("{}", 7);
    CHECK(line.rfind("# ltx ", 0) == 0);
    CHECK(line.find("config_hash=" + hex64(hash_string("{}"))) != std::string::npos);
    CHECK(line.find("master_seed=7") != std::string::npos);
    CHECK(provenance_line("{}", std::nullopt).find("master_seed=none") != std::string::npos);
}

TEST_CASE("hashed_uniform stays in [0,1)") {
    double lo = 1, hi = 0, sum = 0;
    for (std::uint64_t k = 0; k < 10000; ++k) {
        const double u = hashed_uniform(k);
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    CHECK(sum / 10000 == doctest::Approx(0.5).epsilon(0.02));
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("mean and population std") {
    const std::vector<double> v{1, 2, 3, 4};
    CHECK(mean(v) == doctest::Approx(2.5));
    CHECK(population_std(v) == doctest::Approx(std::sqrt(1.25)));
}

TEST_CASE("csv reader skips comments and reports bad cells") {
    std::istringstream in("# header comment\na,b\n1,2\n\n3,4\n");
    const auto t = csv::read(in);
    CHECK(t.header == std::vector<std::string>{"a", "b"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.line_numbers[1] == 5);
    CHECK(csv::to_double("1.5", 1, "a") == 1.5);
    CHECK_THROWS_AS(csv::to_double("x", 3, "a"), Error);
    CHECK_THROWS_AS(t.column("zz"), Error);
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345678.0}) CHECK(csv::to_double(csv::format(v), 0, "") == v);
}

TEST_CASE("csv round trip preserves the dataset exactly") {
    const auto ds = data::make_synthetic({60, 4, Task::Regression, 1.0, 3});
    std::stringstream buf;
    data::write_csv(buf, ds, "target", "# provenance\n");
    const auto back = data::parse_csv(buf, "target", Task::Regression);
    CHECK(back.feature_names == ds.feature_names);
    CHECK(back.features == ds.features);
    CHECK(back.targets == ds.targets);
}

TEST_CASE("csv ingestion errors") {
    SUBCASE("missing target column") {
        std::istringstream in("a,b\n1,2\n");
        CHECK_THROWS_AS(data::parse_csv(in, "y", Task::Regression), Error);
    }
    SUBCASE("non-binary classification target") {
        std::istringstream in("a,y\n1,2\n");
        CHECK_THROWS_AS(data::parse_csv(in, "y", Task::Classification), Error);
    }
    SUBCASE("NaN cell") {
        std::istringstream in("a,y\nnan,1\n");
        CHECK_THROWS_AS(data::parse_csv(in, "y", Task::Classification), Error);
    }
    SUBCASE("ragged row") {
        std::istringstream in("a,y\n1\n");
        CHECK_THROWS_AS(data::parse_csv(in, "y", Task::Classification), Error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(data::load_csv("/nonexistent/file.csv", "y", Task::Regression), Error);
    }
}

TEST_CASE("make_synthetic is a pure function of its spec") {
    const data::SyntheticSpec spec{500, 10, Task::Classification, 1.0, 7};
    const auto a = data::make_synthetic(spec);
    const auto b = data::make_synthetic(spec);
    CHECK(a.rows() == 500);
    CHECK(a.cols() == 10);
    CHECK(a.features == b.features);
    CHECK(a.targets == b.targets);
    a.validate();
    auto other = spec;
    other.seed = 8;
    CHECK(data::make_synthetic(other).features != a.features);
    const double pos = a.targets.mean();
    CHECK(pos > 0.2);
    CHECK(pos < 0.8);
}

TEST_CASE("synthetic spec validation") {
    CHECK_THROWS_AS(data::make_synthetic({10, 10, Task::Classification, 1.0, 0}), Error);
    CHECK_THROWS_AS(data::make_synthetic({100, 1, Task::Classification, 1.0, 0}), Error);
    CHECK_THROWS_AS(data::make_synthetic({100, 4, Task::Classification, -1.0, 0}), Error);
    nlohmann::json j = data::SyntheticSpec{100, 4, Task::Regression, 0.5, 9};
    const auto s = j.get<data::SyntheticSpec>();
    CHECK(s.n == 100);
    CHECK(s.task == Task::Regression);
    CHECK(s.mismatch_strength == 0.5);
    CHECK(s.seed == 9);
}

TEST_CASE("split is a 70/10/20 partition") {
    const auto s = data::split(100, 1);
    CHECK(s.train.size() == 70);
    CHECK(s.val.size() == 10);
    CHECK(s.test.size() == 20);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == 100);
    CHECK(*all.rbegin() == 99);
    const auto again = data::split(100, 1);
    CHECK(again.train == s.train);
    CHECK(data::split(100, 2).train != s.train);
    CHECK_THROWS_AS(data::split(5, 1), Error);
}

TEST_CASE("stratified split keeps the label mix") {
    std::vector<int> labels(200, 1);
    for (std::size_t i = 0; i < 40; ++i) labels[i * 5] = 0;
    const auto s = data::split(200, 4, labels);
    auto zeros = [&](const IndexList& part) {
        std::size_t z = 0;
        for (auto i : part) z += labels[i] == 0;
        return z;
    };
    CHECK(zeros(s.train) == doctest::Approx(28).epsilon(0.05));
    CHECK(zeros(s.val) >= 3);
    CHECK(zeros(s.val) <= 5);
    CHECK(zeros(s.test) >= 7);
    CHECK(zeros(s.test) <= 9);
}

TEST_CASE("standardize uses only the fitting rows") {
    data::Dataset ds;
    ds.features.resize(4, 2);
    ds.features << 1, 5, 3, 5, 100, 5, -7, 5;
    ds.targets = Vector::Zero(4);
    ds.feature_names = {"a", "b"};
    const IndexList fit{0, 1};
    auto [out, scaler] = data::standardize(ds, fit);
    CHECK(scaler.means[0] == 2.0);
    CHECK(scaler.stds[0] == 1.0);
    CHECK(scaler.stds[1] == 0.0);
    CHECK(out.features(0, 0) == -1.0);
    CHECK(out.features(1, 0) == 1.0);
    CHECK(out.features(2, 0) == 98.0);
    CHECK(out.features(3, 1) == 0.0);
    const std::vector<double> x{4.0, 6.0};
    const auto t = scaler.transform(x);
    CHECK(t[0] == 2.0);
    CHECK(t[1] == 1.0);
}

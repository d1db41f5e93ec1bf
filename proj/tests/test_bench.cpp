#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltx/bench.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ltx;
using namespace ltx::bench;
using nlohmann::json;

namespace {

double brute_auroc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1;
                wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return wins / pairs;
}

json small_config() {
    return json::parse(R"({
        "schema_version": 1,
        "datasets": [{"id": "toy", "synthetic": {"n": 300, "d": 5, "seed": 3}}],
        "explainer": {"n_samples": 40, "background_cap": 20},
        "rejectors": ["ULER", "RandRej"],
        "grids": {"ULER": {"kernel": ["rbf"], "C": [1], "k": [2], "epsilon0": [0.5]}},
        "repeats": 2,
        "master_seed": 11
    })");
}

std::string error_of(const json& doc) {
    try {
        parse_config(doc);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
        return e.what();
    }
    return {};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("auroc matches all-pairs counting") {
    Rng rng(1);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 2 + rng() % 12;
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % 5);
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 0;
        y[1] = 1;
        const auto a = auroc(s, y);
        REQUIRE(a.has_value());
        CHECK(*a == brute_auroc(s, y));
    }
    CHECK_FALSE(auroc(std::vector<double>{1, 2}, std::vector<int>{1, 1}).has_value());
}

TEST_CASE("rejection count rounds half up") {
    CHECK(rejection_count(100, 0.01) == 1);
    CHECK(rejection_count(30, 0.05) == 2);
    CHECK(rejection_count(10, 0.25) == 3);
    CHECK(rejection_count(10, 0.0) == 0);
    CHECK(rejection_count(10, 1.0) == 10);
}

TEST_CASE("set composition") {
    const std::vector<double> s{0.1, 0.9, 0.2, 0.8, 0.5};
    const std::vector<int> y{0, 1, 1, 0, 1};
    const auto c = set_composition(s, y, 0.4);
    CHECK(c.n_rejected == 2);
    CHECK(c.low_rejected == 1);
    CHECK(c.pct_low_rejected == 0.5);
    CHECK(c.pct_low_accepted == doctest::Approx(1.0 / 3.0));
    const auto none = set_composition(s, y, 0.0);
    CHECK(none.pct_low_rejected == 0.0);
    CHECK(none.pct_low_accepted == doctest::Approx(0.4));
}

TEST_CASE("paired t statistic") {
    const std::vector<double> a{1, 2, 3, 4}, b{0, 1, 1, 3};
    const auto t = paired_t(a, b);
    // differences 1, 1, 2, 1: mean 1.25, sd 0.5, se 0.25.
    CHECK(t.mean_difference == 1.25);
    CHECK(t.t == doctest::Approx(5.0));
    CHECK(t.df == 3);
    CHECK(std::isinf(paired_t(std::vector<double>{2, 3}, std::vector<double>{1, 2}).t));
}

TEST_CASE("grid sizes") {
    RejectorParams base;
    CHECK(expand_grid(base, default_grid(RejectorKind::Uler)).size() == 81);
    base.kind = RejectorKind::UlerNoAug;
    CHECK(expand_grid(base, default_grid(RejectorKind::UlerNoAug)).size() == 9);
    base.kind = RejectorKind::NovRejZ;
    CHECK(expand_grid(base, default_grid(RejectorKind::NovRejZ)).size() == 3);
    base.kind = RejectorKind::RandRej;
    CHECK(expand_grid(base, default_grid(RejectorKind::RandRej)).size() == 1);
}

TEST_CASE("config validation reports JSON pointers") {
    auto doc = small_config();
    doc["rejectors"].push_back("Oracle");
    auto msg = error_of(doc);
    CHECK(msg.find("/rejectors/2") != std::string::npos);
    CHECK(msg.find("PredAmb") != std::string::npos);

    doc = small_config();
    doc["datasets"][0]["synthetic"]["n"] = "many";
    CHECK(error_of(doc).find("/datasets/0/synthetic/n") != std::string::npos);

    doc = small_config();
    doc["surprise"] = 1;
    CHECK(error_of(doc).find("surprise") != std::string::npos);

    doc = small_config();
    doc["schema_version"] = 2;
    CHECK(error_of(doc).find("/schema_version") != std::string::npos);

    doc = small_config();
    doc["grids"]["ULER"]["k_nn"] = json::array({1});
    CHECK(error_of(doc).find("/grids/ULER/k_nn") != std::string::npos);

    doc = small_config();
    doc["rejection_rates"] = json::array({0.1, 1.5});
    CHECK(error_of(doc).find("/rejection_rates/1") != std::string::npos);

    doc = small_config();
    doc["datasets"][0] = json::parse(R"({"id": "h", "annotations": {"path": "judged.csv"}})");
    doc["rejectors"] = json::array({"ULER", "PredAmb"});
    doc.erase("grids");
    CHECK(error_of(doc).find("/rejectors/1") != std::string::npos);
}

TEST_CASE("config defaults and canonical hash") {
    const auto cfg = parse_config(small_config());
    CHECK(cfg.rejection_rates.size() == 25);
    CHECK(cfg.rejection_rates.front() == 0.01);
    CHECK(cfg.rejection_rates.back() == 0.25);
    CHECK(cfg.judgment.tau_z == 0.25);
    CHECK(cfg.grid(RejectorKind::Uler).kernels.size() == 1);
    auto doc = small_config();
    doc["threads"] = 4;
    CHECK(config_hash(parse_config(doc)) == config_hash(cfg));
    doc["master_seed"] = 12;
    CHECK(config_hash(parse_config(doc)) != config_hash(cfg));
    const auto again = parse_config(config_to_json(cfg));
    CHECK(config_to_json(again) == config_to_json(cfg));
}

TEST_CASE("parallel_for reports the lowest failing index") {
    std::vector<int> hit(20, 0);
    parallel_for(20, 3, [&](std::size_t i) { hit[i] = 1; });
    CHECK(std::count(hit.begin(), hit.end(), 1) == 20);
    try {
        parallel_for(20, 4, [](std::size_t i) {
            if (i == 7 || i == 13) throw std::runtime_error("boom " + std::to_string(i));
        });
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "boom 7");
    }
}

TEST_CASE("small experiment: shape, provenance and determinism") {
    const auto cfg = parse_config(small_config());
    const auto result = run_experiment(cfg);
    CHECK(result.records.size() == 2 * 2 * 25);
    CHECK(result.runs.size() == 4);
    REQUIRE(result.datasets.size() == 1);
    CHECK(result.datasets[0].n_judged == 150);

    const auto dir = std::filesystem::temp_directory_path() / "ltx_test_bench";
    std::filesystem::remove_all(dir);
    write_outputs(dir / "serial", result, cfg);
    auto doc = small_config();
    doc["threads"] = 3;
    const auto par_cfg = parse_config(doc);
    write_outputs(dir / "parallel", run_experiment(par_cfg), par_cfg);
    for (const char* f : {"results.csv", "curves.csv", "summary.json"}) {
        const auto a = slurp(dir / "serial" / f);
        CHECK(!a.empty());
        CHECK(a == slurp(dir / "parallel" / f));
    }
    const auto results = slurp(dir / "serial" / "results.csv");
    CHECK(results.rfind(provenance_line(cfg) + "\n", 0) == 0);
    CHECK(std::count(results.begin(), results.end(), '\n') == 1 + 1 + 100);
    const auto summary = json::parse(slurp(dir / "serial" / "summary.json"));
    CHECK(summary["provenance"]["config_hash"] == config_hash(cfg));
    CHECK(summary["datasets"][0]["rejectors"][0]["auroc_per_repeat"].size() == 2);
    std::filesystem::remove_all(dir);
}

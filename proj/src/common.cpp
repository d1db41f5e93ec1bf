#include "ltx/common.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#ifndef LTX_VERSION
#define LTX_VERSION "0.0.0"
#endif

namespace ltx {

const char* to_string(Task task) {
    return task == Task::Classification ? "classification" : "regression";
}

Task task_from_string(const std::string& name) {
    if (name == "classification") return Task::Classification;
    if (name == "regression") return Task::Regression;
    fail(ErrorKind::InvalidArgument, "unknown task '" + name + "' (expected classification or regression)");
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

std::uint64_t hash_string(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string provenance_line(std::string_view canonical_config, std::optional<std::uint64_t> seed) {
    return std::string("# ltx ") + LTX_VERSION + " config_hash=" + hex64(hash_string(canonical_config)) +
           " master_seed=" + (seed ? std::to_string(*seed) : std::string("none"));
}

double hashed_uniform(std::uint64_t key) {
    return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
}

double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(std::span<const double> v) {
    if (v.empty()) return 0.0;
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

IndexList permutation(std::size_t n, Rng& rng) {
    IndexList idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Fisher-Yates with our own bounded draw so the result does not depend on
    // the standard library's shuffle implementation.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

Vector select(const Vector& v, std::span<const std::size_t> rows) {
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(rows[i])];
    return out;
}

}  // namespace ltx

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltx {

// Rows are instances.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using IndexList = std::vector<std::size_t>;

enum class Task { Classification, Regression };

const char* to_string(Task task);
Task task_from_string(const std::string& name);

/// Error categories mirror the status codes of the C API.
enum class ErrorKind { InvalidArgument, Io, Parse, Numeric, Config, State };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool cond, const std::string& what) {
    if (!cond) fail(ErrorKind::InvalidArgument, what);
}

using Rng = std::mt19937_64;

/// Mixes any number of integers into an independent 64-bit stream seed.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

/// Hash a string to a seed part (FNV-1a).
std::uint64_t hash_string(std::string_view text);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

/// "# ltx <version> config_hash=<hash of canonical> master_seed=<seed|none>"
std::string provenance_line(std::string_view canonical_config, std::optional<std::uint64_t> seed);

/// Uniform double in [0, 1) computed purely from a key, without stream state.
double hashed_uniform(std::uint64_t key);

inline std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
    return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline std::span<const double> as_span(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

inline Eigen::Map<const Vector> as_vector(std::span<const double> s) {
    return {s.data(), static_cast<Eigen::Index>(s.size())};
}

double mean(std::span<const double> v);
/// Population standard deviation (divides by n).
double population_std(std::span<const double> v);

/// Uniformly random permutation of 0..n-1.
IndexList permutation(std::size_t n, Rng& rng);

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);
Vector select(const Vector& v, std::span<const std::size_t> rows);

}  // namespace ltx

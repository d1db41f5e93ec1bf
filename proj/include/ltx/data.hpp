#pragma once

#include "ltx/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ltx::data {

struct Dataset {
    Matrix features;
    Vector targets;
    std::vector<std::string> feature_names;
    Task task = Task::Classification;

    std::size_t rows() const { return static_cast<std::size_t>(features.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(features.cols()); }

    /// Throws ErrorKind::InvalidArgument naming the first violated invariant.
    void validate() const;

    Dataset subset(std::span<const std::size_t> rows) const;
};

struct SplitIndices {
    IndexList train;
    IndexList val;
    IndexList test;
};

struct SyntheticSpec {
    std::size_t n = 2000;
    std::size_t d = 10;
    Task task = Task::Classification;
    /// Weight of the nonlinear component the linear predictor cannot represent.
    double mismatch_strength = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

Dataset load_csv(const std::filesystem::path& path, const std::string& target_column, Task task);
Dataset parse_csv(std::istream& in, const std::string& target_column, Task task);

/// Writes features followed by the target column. Lines starting with '#' in
/// `preamble` are emitted first and skipped again by parse_csv.
void write_csv(std::ostream& out, const Dataset& ds, const std::string& target_column = "y",
               const std::string& preamble = {});

Dataset make_synthetic(const SyntheticSpec& spec);

/// 70/10/20 partition. When `strata` is given (one label per row) every part
/// receives approximately the same label mix.
SplitIndices split(std::size_t n, std::uint64_t seed, std::span<const int> strata = {});
SplitIndices split(const Dataset& ds, std::uint64_t seed);

struct Scaler {
    std::vector<std::string> feature_names;
    std::vector<double> means;
    std::vector<double> stds;  // 0 for constant features; those are only centered

    void transform(Matrix& m) const;
    std::vector<double> transform(std::span<const double> x) const;
};

void to_json(nlohmann::json& j, const Scaler& s);
void from_json(const nlohmann::json& j, Scaler& s);

Scaler fit_scaler(const Matrix& features, std::span<const std::size_t> fit_rows,
                  std::vector<std::string> names = {});
std::pair<Dataset, Scaler> standardize(const Dataset& ds, std::span<const std::size_t> fit_rows);

}  // namespace ltx::data

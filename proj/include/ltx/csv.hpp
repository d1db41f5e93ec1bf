#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace ltx::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;

    /// Column position by name; throws a parse error naming the column.
    std::size_t column(const std::string& name) const;
};

/// Comma-separated, no quoting. Blank lines and lines starting with '#' are skipped.
Table read(std::istream& in);

double to_double(const std::string& cell, std::size_t line, const std::string& column);
long long to_integer(const std::string& cell, std::size_t line, const std::string& column);

/// Shortest round-trip representation.
std::string format(double v);

}  // namespace ltx::csv

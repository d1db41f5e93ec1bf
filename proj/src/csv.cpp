#include "ltx/csv.hpp"

#include "ltx/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <sstream>

namespace ltx::csv {

namespace {

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

std::size_t Table::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorKind::Parse, "missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

Table read(std::istream& in) {
    Table t;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cells = split_line(line);
        if (!have_header) {
            t.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != t.header.size())
            fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                                       " cells, found " + std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
        t.line_numbers.push_back(line_no);
    }
    if (!have_header) fail(ErrorKind::Parse, "empty CSV: no header row");
    return t;
}

double to_double(const std::string& cell, std::size_t line, const std::string& column) {
    double v = 0.0;
    const char* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(cell.data(), end, v);
    if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
        fail(ErrorKind::Parse, "line " + std::to_string(line) + ", column '" + column + "': non-numeric cell '" + cell + "'");
    return v;
}

long long to_integer(const std::string& cell, std::size_t line, const std::string& column) {
    long long v = 0;
    const char* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(cell.data(), end, v);
    if (cell.empty() || ec != std::errc() || ptr != end)
        fail(ErrorKind::Parse, "line " + std::to_string(line) + ", column '" + column + "': not an integer '" + cell + "'");
    return v;
}

std::string format(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace ltx::csv

#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <vector>

#include "stgt/error.hpp"

namespace stgt::csv {

// Minimal CSV support for the project's own file formats: comma-separated,
// no quoting, UTF-8, LF (or CRLF) line endings.

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r') {
        fields.back().pop_back();
    }
    return fields;
}

/// All rows of a CSV file, header included. Fails on missing files.
inline std::vector<std::vector<std::string>> read_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        rows.push_back(split_line(line));
    }
    return rows;
}

inline double parse_double(const std::string& field, const std::string& context) {
    double value = 0.0;
    const char* first = field.data();
    const char* last = first + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw IoError("bad numeric value '" + field + "' in " + context);
    }
    return value;
}

} // namespace stgt::csv

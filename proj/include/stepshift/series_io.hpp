#pragma once

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stepshift/detail/text_io.hpp"

namespace stepshift {

namespace detail {

inline std::string_view trim(std::string_view text) {
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) {
        text.remove_prefix(1);
    }
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) {
        text.remove_suffix(1);
    }
    return text;
}

} // namespace detail

/// Reads one observation per line. Blank lines and `#` comments are skipped;
/// anything else must be a single finite decimal. Errors carry the file name
/// and line number.
inline std::vector<double> read_series_values(std::istream& in, const std::string& name) {
    std::vector<double> values;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto token = detail::trim(line);
        if (token.empty() || token.front() == '#') {
            continue;
        }
        try {
            values.push_back(detail::parse_double(token));
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(name + ":" + std::to_string(line_no) + ": " +
                                     e.what());
        }
        if (!std::isfinite(values.back())) {
            throw std::runtime_error(name + ":" + std::to_string(line_no) +
                                     ": non-finite value");
        }
    }
    return values;
}

inline std::vector<double> read_series_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return read_series_values(in, path.string());
}

/// Writes one observation per line, preceded by optional `#` comment lines.
inline void write_series_file(const std::filesystem::path& path,
                              std::span<const double> values,
                              std::span<const std::string> comments = {}) {
    std::string out;
    for (const auto& comment : comments) {
        out += "# ";
        out += comment;
        out += '\n';
    }
    for (const double v : values) {
        out += detail::format_double(v);
        out += '\n';
    }
    detail::atomic_write(path, out);
}

} // namespace stepshift

/// @file io.hpp
/// Serialization primitives shared by all report writers: shortest
/// round-trip decimal doubles, CSV rows, NDJSON lines.

#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace snse {

/// Shortest decimal string that parses back to exactly the same double.
inline std::string fmt_double(double x) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double x = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw std::invalid_argument("bad numeric field: '" + std::string(s) + "'");
    return x;
}

inline long parse_long(std::string_view s) {
    long x = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw std::invalid_argument("bad integer field: '" + std::string(s) + "'");
    return x;
}

/// Split one CSV line on commas.  No quoting: every field this project
/// emits is numeric or a bare identifier.
inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::vector<std::string> read_lines(const std::string& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

inline void write_text(const std::string& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + file);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + file);
}

} // namespace snse

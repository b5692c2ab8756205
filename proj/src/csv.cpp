#include "maskmeta/csv.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace maskmeta::csv {

int Document::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
}

int Document::require_column(const std::string& name) const {
    int idx = column(name);
    if (idx < 0) throw std::runtime_error(fmt::format("csv: missing column '{}'", name));
    return idx;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw std::runtime_error(fmt::format("csv: cannot parse number '{}'", s));
    }
    return v;
}

std::int64_t parse_int(const std::string& s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw std::runtime_error(fmt::format("csv: cannot parse integer '{}'", s));
    }
    return v;
}

void write_file(const std::string& path, const Document& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
    auto write_row = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (row[i].find_first_of(",\n\"") != std::string::npos) {
                throw std::runtime_error(
                    fmt::format("csv: unsupported character in field '{}'", row[i]));
            }
            if (i) out << ',';
            out << row[i];
        }
        out << '\n';
    };
    write_row(doc.header);
    for (const auto& row : doc.rows) {
        if (row.size() != doc.header.size()) {
            throw std::runtime_error("csv: row width differs from header");
        }
        write_row(row);
    }
    if (!out) throw std::runtime_error(fmt::format("write failure on '{}'", path));
}

Document read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
    Document doc;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && in.eof()) break;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        if (first) {
            doc.header = std::move(fields);
            first = false;
        } else {
            if (fields.size() != doc.header.size()) {
                throw std::runtime_error(
                    fmt::format("csv '{}': row {} has {} fields, header has {}", path,
                                doc.rows.size() + 2, fields.size(), doc.header.size()));
            }
            doc.rows.push_back(std::move(fields));
        }
    }
    if (first) throw std::runtime_error(fmt::format("csv '{}': empty file", path));
    return doc;
}

}  // namespace maskmeta::csv

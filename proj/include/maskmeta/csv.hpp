#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace maskmeta::csv {

/// Plain comma-separated table, no quoting. Doubles are written with
/// shortest round-trip formatting so read-back is bit-exact for finite values.
struct Document {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;         // -1 when absent
    int require_column(const std::string& name) const;  // throws when absent
};

std::string format_double(double v);
double parse_double(const std::string& s);
std::int64_t parse_int(const std::string& s);

void write_file(const std::string& path, const Document& doc);
Document read_file(const std::string& path);

}  // namespace maskmeta::csv

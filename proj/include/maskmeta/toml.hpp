#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace maskmeta::toml {

/// Minimal TOML subset used by the config files: [table] and [[array-of-table]]
/// headers (dotted paths allowed), `key = value` pairs with string, integer,
/// float, boolean and flat-array values, and `#` comments.
class Value;
using Table = std::map<std::string, Value>;
using Array = std::vector<Value>;

class Value {
public:
    using Storage = std::variant<std::string, std::int64_t, double, bool, Array, Table>;

    Value() : data_(Table{}) {}
    explicit Value(Storage data) : data_(std::move(data)) {}

    bool is_table() const { return std::holds_alternative<Table>(data_); }
    bool is_array() const { return std::holds_alternative<Array>(data_); }

    const Table& as_table() const;
    const Array& as_array() const;
    Table& as_table();
    Array& as_array();

    std::string as_string() const;
    std::int64_t as_int() const;
    double as_double() const;  // accepts integer literals
    bool as_bool() const;

private:
    Storage data_;
};

/// Parses TOML text; throws std::runtime_error with a line number on error.
Table parse(const std::string& text);
Table parse_file(const std::string& path);

/// Lookup helpers for required / optional keys; `where` names the table in errors.
const Value* find(const Table& t, const std::string& key);
const Value& get(const Table& t, const std::string& key, const std::string& where);
std::string get_string(const Table& t, const std::string& key, const std::string& where);
std::int64_t get_int(const Table& t, const std::string& key, const std::string& where);
double get_double(const Table& t, const std::string& key, const std::string& where);

std::string get_string_or(const Table& t, const std::string& key, std::string fallback);
std::int64_t get_int_or(const Table& t, const std::string& key, std::int64_t fallback);
double get_double_or(const Table& t, const std::string& key, double fallback);
bool get_bool_or(const Table& t, const std::string& key, bool fallback);

}  // namespace maskmeta::toml

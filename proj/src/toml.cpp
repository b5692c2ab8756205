#include "maskmeta/toml.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace maskmeta::toml {

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
    throw std::runtime_error(fmt::format("toml parse error at line {}: {}", line, msg));
}

std::string strip(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Removes a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

std::vector<std::string> split_path(const std::string& s, int line) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, '.')) {
        part = strip(part);
        if (part.empty()) fail(line, "empty path segment");
        parts.push_back(part);
    }
    if (parts.empty()) fail(line, "empty table path");
    return parts;
}

Value parse_scalar(const std::string& text, int line) {
    std::string s = strip(text);
    if (s.empty()) fail(line, "missing value");
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') fail(line, "unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) {
                ++i;
                switch (s[i]) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: fail(line, fmt::format("unsupported escape \\{}", s[i]));
                }
            } else {
                out += s[i];
            }
        }
        return Value(Value::Storage(out));
    }
    if (s == "true") return Value(Value::Storage(true));
    if (s == "false") return Value(Value::Storage(false));
    bool looks_float = s.find_first_of(".eE") != std::string::npos;
    if (!looks_float) {
        std::int64_t iv = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), iv);
        if (ec == std::errc() && p == s.data() + s.size()) return Value(Value::Storage(iv));
    }
    double dv = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), dv);
    if (ec == std::errc() && p == s.data() + s.size()) return Value(Value::Storage(dv));
    fail(line, fmt::format("cannot parse value '{}'", s));
}

Value parse_value(const std::string& text, int line) {
    std::string s = strip(text);
    if (!s.empty() && s.front() == '[') {
        if (s.back() != ']') fail(line, "unterminated array");
        std::string body = s.substr(1, s.size() - 2);
        Array arr;
        std::string cur;
        bool in_str = false;
        for (char ch : body) {
            if (ch == '"') in_str = !in_str;
            if (ch == ',' && !in_str) {
                if (!strip(cur).empty()) arr.push_back(parse_scalar(cur, line));
                cur.clear();
            } else {
                cur += ch;
            }
        }
        if (!strip(cur).empty()) arr.push_back(parse_scalar(cur, line));
        return Value(Value::Storage(std::move(arr)));
    }
    return parse_scalar(s, line);
}

Table* descend(Table& root, const std::vector<std::string>& path, int line) {
    Table* cur = &root;
    for (const std::string& part : path) {
        auto [it, inserted] = cur->try_emplace(part, Value{});
        Value& v = it->second;
        if (v.is_array()) {
            Array& arr = v.as_array();
            if (arr.empty() || !arr.back().is_table()) fail(line, "path crosses a scalar array");
            cur = &arr.back().as_table();
        } else if (v.is_table()) {
            cur = &v.as_table();
        } else {
            fail(line, fmt::format("key '{}' already holds a scalar", part));
        }
    }
    return cur;
}

}  // namespace

const Table& Value::as_table() const {
    if (!is_table()) throw std::runtime_error("toml: value is not a table");
    return std::get<Table>(data_);
}
Table& Value::as_table() {
    if (!is_table()) throw std::runtime_error("toml: value is not a table");
    return std::get<Table>(data_);
}
const Array& Value::as_array() const {
    if (!is_array()) throw std::runtime_error("toml: value is not an array");
    return std::get<Array>(data_);
}
Array& Value::as_array() {
    if (!is_array()) throw std::runtime_error("toml: value is not an array");
    return std::get<Array>(data_);
}
std::string Value::as_string() const {
    if (const auto* s = std::get_if<std::string>(&data_)) return *s;
    throw std::runtime_error("toml: value is not a string");
}
std::int64_t Value::as_int() const {
    if (const auto* i = std::get_if<std::int64_t>(&data_)) return *i;
    throw std::runtime_error("toml: value is not an integer");
}
double Value::as_double() const {
    if (const auto* d = std::get_if<double>(&data_)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&data_)) return static_cast<double>(*i);
    throw std::runtime_error("toml: value is not a number");
}
bool Value::as_bool() const {
    if (const auto* b = std::get_if<bool>(&data_)) return *b;
    throw std::runtime_error("toml: value is not a boolean");
}

Table parse(const std::string& text) {
    Table root;
    Table* current = &root;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = strip(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            bool array_header = line.size() > 1 && line[1] == '[';
            std::size_t close = line.find(array_header ? "]]" : "]");
            if (close == std::string::npos || strip(line.substr(close + (array_header ? 2 : 1))) != "") {
                fail(line_no, "malformed table header");
            }
            auto path = split_path(line.substr(array_header ? 2 : 1, close - (array_header ? 2 : 1)),
                                   line_no);
            if (array_header) {
                std::vector<std::string> parent(path.begin(), path.end() - 1);
                Table* holder = descend(root, parent, line_no);
                auto [it, inserted] =
                    holder->try_emplace(path.back(), Value(Value::Storage(Array{})));
                if (!it->second.is_array()) {
                    fail(line_no, fmt::format("key '{}' is not an array of tables", path.back()));
                }
                it->second.as_array().push_back(Value{});
                current = &it->second.as_array().back().as_table();
            } else {
                current = descend(root, path, line_no);
            }
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
        std::string key = strip(line.substr(0, eq));
        if (key.empty()) fail(line_no, "empty key");
        if (current->count(key)) fail(line_no, fmt::format("duplicate key '{}'", key));
        (*current)[key] = parse_value(line.substr(eq + 1), line_no);
    }
    return root;
}

Table parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open config file '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const Value* find(const Table& t, const std::string& key) {
    auto it = t.find(key);
    return it == t.end() ? nullptr : &it->second;
}

const Value& get(const Table& t, const std::string& key, const std::string& where) {
    const Value* v = find(t, key);
    if (!v) throw std::runtime_error(fmt::format("missing key '{}' in {}", key, where));
    return *v;
}

std::string get_string(const Table& t, const std::string& key, const std::string& where) {
    return get(t, key, where).as_string();
}
std::int64_t get_int(const Table& t, const std::string& key, const std::string& where) {
    return get(t, key, where).as_int();
}
double get_double(const Table& t, const std::string& key, const std::string& where) {
    return get(t, key, where).as_double();
}

std::string get_string_or(const Table& t, const std::string& key, std::string fallback) {
    const Value* v = find(t, key);
    return v ? v->as_string() : std::move(fallback);
}
std::int64_t get_int_or(const Table& t, const std::string& key, std::int64_t fallback) {
    const Value* v = find(t, key);
    return v ? v->as_int() : fallback;
}
double get_double_or(const Table& t, const std::string& key, double fallback) {
    const Value* v = find(t, key);
    return v ? v->as_double() : fallback;
}
bool get_bool_or(const Table& t, const std::string& key, bool fallback) {
    const Value* v = find(t, key);
    return v ? v->as_bool() : fallback;
}

}  // namespace maskmeta::toml

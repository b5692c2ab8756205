#include <doctest.h>

#include <cstdio>
#include <random>
#include <stdexcept>

#include "maskmeta/csv.hpp"
#include "maskmeta/toml.hpp"

using namespace maskmeta;

TEST_CASE("toml parsing") {
    const std::string text = R"(
# comment
title = "hello # not a comment"
count = 42
ratio = 0.35
flag = true

[section]
nested = -7
values = [1, 2.5, "three"]

[section.sub]
deep = "yes"

[[objects]]
name = "a"
speed = 1.5

[[objects]]
name = "b"
flicker = [3, 5]
)";
    toml::Table t = toml::parse(text);
    CHECK(toml::get_string(t, "title", "root") == "hello # not a comment");
    CHECK(toml::get_int(t, "count", "root") == 42);
    CHECK(toml::get_double(t, "ratio", "root") == 0.35);
    CHECK(toml::get_bool_or(t, "flag", false));
    CHECK(toml::get_bool_or(t, "missing", true));

    const toml::Table& section = toml::get(t, "section", "root").as_table();
    CHECK(toml::get_int(section, "nested", "[section]") == -7);
    const toml::Array& values = toml::get(section, "values", "[section]").as_array();
    REQUIRE(values.size() == 3);
    CHECK(values[0].as_int() == 1);
    CHECK(values[1].as_double() == 2.5);
    CHECK(values[2].as_string() == "three");
    CHECK(toml::get_string(toml::get(section, "sub", "x").as_table(), "deep", "x") == "yes");

    const toml::Array& objects = toml::get(t, "objects", "root").as_array();
    REQUIRE(objects.size() == 2);
    CHECK(toml::get_string(objects[0].as_table(), "name", "o") == "a");
    CHECK(toml::get_double(objects[0].as_table(), "speed", "o") == 1.5);
    const toml::Array& flicker = toml::get(objects[1].as_table(), "flicker", "o").as_array();
    CHECK(flicker.size() == 2);

    // Integer literals read as doubles too.
    CHECK(toml::get_double(t, "count", "root") == 42.0);
}

TEST_CASE("toml errors carry line numbers") {
    CHECK_THROWS_WITH_AS(toml::parse("a ="), doctest::Contains("line 1"), std::runtime_error);
    CHECK_THROWS_WITH_AS(toml::parse("\nnot a statement"), doctest::Contains("line 2"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(toml::parse("x = 1\nx = 2"), doctest::Contains("duplicate"),
                         std::runtime_error);
    CHECK_THROWS_AS(toml::parse("v = [1, 2"), std::runtime_error);
    CHECK_THROWS_AS(toml::get_int(toml::parse("a = 1"), "b", "root"), std::runtime_error);
}

TEST_CASE("csv round trip is bit exact for doubles") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> ud(-1e6, 1e6);
    csv::Document doc;
    doc.header = {"name", "value"};
    std::vector<double> values;
    for (int i = 0; i < 1000; ++i) {
        double v = std::exp(ud(rng) / 1e5) * ud(rng);
        values.push_back(v);
        doc.rows.push_back({"row", csv::format_double(v)});
    }
    const char* path = "csv_roundtrip_test.csv";
    csv::write_file(path, doc);
    csv::Document loaded = csv::read_file(path);
    REQUIRE(loaded.rows.size() == values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        CHECK(csv::parse_double(loaded.rows[i][1]) == values[i]);
    }
    CHECK(loaded.column("value") == 1);
    CHECK(loaded.column("nope") == -1);
    CHECK_THROWS_AS(loaded.require_column("nope"), std::runtime_error);
    std::remove(path);
}

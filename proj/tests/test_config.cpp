#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "glp/config.hpp"

using namespace glp;

namespace {

// Independent FNV-1a 64 over an explicit byte string.
std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

TEST_CASE("config text parses keys, values, comments, and blank lines") {
    const ConfigMap m = parse_config_text(
        "# full-line comment\n"
        "seed = 7\n"
        "\n"
        "  out =  runs/x  # trailing comment\n"
        "name=spaceless\n");
    REQUIRE(m.size() == 3);
    CHECK(m.at("seed") == "7");
    CHECK(m.at("out") == "runs/x");
    CHECK(m.at("name") == "spaceless");
}

TEST_CASE("values may contain further equals signs") {
    const ConfigMap m = parse_config_text("expr = a=b=c\n");
    CHECK(m.at("expr") == "a=b=c");
}

TEST_CASE("malformed config lines raise usage errors naming the line") {
    CHECK_THROWS_MATCHES(parse_config_text("just words\n"), UsageError,
                         Catch::Matchers::Message(
                             "config line 1: expected `key = value`, got: just words"));
    CHECK_THROWS_MATCHES(
        parse_config_text("a = 1\n = 2\n"), UsageError,
        Catch::Matchers::Message("config line 2: empty key"));
    CHECK_THROWS_MATCHES(
        parse_config_text("a = 1\nb =\n"), UsageError,
        Catch::Matchers::Message("config line 2: empty value for key `b`"));
    CHECK_THROWS_MATCHES(
        parse_config_text("a = 1\na = 2\n"), UsageError,
        Catch::Matchers::Message("config line 2: duplicate key `a`"));
    CHECK_THROWS_AS(parse_config_text("x = 1 # ok\nx = 1\n"), UsageError);
}

TEST_CASE("a comment-only value is an empty value") {
    CHECK_THROWS_AS(parse_config_text("a = # nothing left\n"), UsageError);
}

TEST_CASE("missing config files are usage errors") {
    CHECK_THROWS_AS(read_config_file("definitely/not/here.cfg"), UsageError);
}

TEST_CASE("config hash equals FNV-1a over the sorted canonical serialization") {
    const ConfigMap m = {{"b", "2"}, {"a", "1"}};
    // std::map iterates sorted, so the canonical byte string is fixed.
    CHECK(config_hash(m) == hex16(fnv1a("a=1\nb=2\n")));
    CHECK(config_hash({}) == hex16(14695981039346656037ULL));
}

TEST_CASE("config hash is sensitive to every key and value") {
    const ConfigMap base = {{"seed", "7"}, {"out", "runs/x"}};
    CHECK(config_hash(base) != config_hash({{"seed", "8"}, {"out", "runs/x"}}));
    CHECK(config_hash(base) != config_hash({{"seed", "7"}, {"out", "runs/y"}}));
    CHECK(config_hash(base) != config_hash({{"seed", "7"}}));
    // Key/value boundary matters: (ab, c) vs (a, bc).
    CHECK(config_hash({{"ab", "c"}}) != config_hash({{"a", "bc"}}));
}

TEST_CASE("resolution layers flags over file over defaults") {
    const ConfigMap defaults = {{"seed", "0"}, {"out", "runs/d"}, {"lr", "0.1"}};
    const ConfigMap file = {{"seed", "5"}, {"lr", "0.2"}};
    const ConfigMap flags = {{"lr", "0.3"}};
    const RunConfig cfg = resolve_config(defaults, file, flags);
    CHECK(cfg.str("seed") == "5");
    CHECK(cfg.str("lr") == "0.3");
    CHECK(cfg.str("out") == "runs/d");
}

TEST_CASE("unknown keys from either layer are rejected") {
    const ConfigMap defaults = {{"seed", "0"}};
    CHECK_THROWS_MATCHES(resolve_config(defaults, {{"sede", "1"}}, {}), UsageError,
                         Catch::Matchers::Message("unknown config key: sede"));
    CHECK_THROWS_AS(resolve_config(defaults, {}, {{"extra", "1"}}), UsageError);
}

TEST_CASE("typed accessors parse exactly and reject junk") {
    RunConfig cfg;
    cfg.values = {{"n", "42"},      {"big", "18446744073709551615"},
                  {"neg", "-3"},    {"frac", "2.5e-3"},
                  {"yes", "true"},  {"no", "0"},
                  {"word", "ten"},  {"trail", "7x"},
                  {"empty", ""},    {"out", "runs/x"}};
    CHECK(cfg.u64("n") == 42);
    CHECK(cfg.u64("big") == 18446744073709551615ULL);
    CHECK(cfg.dbl("frac") == 2.5e-3);
    CHECK(cfg.dbl("n") == 42.0);
    CHECK(cfg.boolean("yes"));
    CHECK_FALSE(cfg.boolean("no"));
    CHECK(cfg.path("out") == "runs/x");

    CHECK_THROWS_AS(cfg.u64("neg"), UsageError);
    CHECK_THROWS_AS(cfg.u64("word"), UsageError);
    CHECK_THROWS_AS(cfg.u64("trail"), UsageError);
    CHECK_THROWS_AS(cfg.u64("frac"), UsageError);
    CHECK_THROWS_AS(cfg.u64("empty"), UsageError);
    CHECK_THROWS_AS(cfg.dbl("word"), UsageError);
    CHECK_THROWS_AS(cfg.dbl("trail"), UsageError);
    CHECK_THROWS_AS(cfg.dbl("empty"), UsageError);
    CHECK_THROWS_AS(cfg.boolean("n"), UsageError);
    CHECK_THROWS_MATCHES(cfg.path("empty"), UsageError,
                         Catch::Matchers::Message("required setting missing: empty"));
    CHECK_THROWS_AS(cfg.str("undeclared"), std::runtime_error);
}

TEST_CASE("resolved config echo is a hash header plus canonical text") {
    const std::filesystem::path dir =
        std::filesystem::temp_directory_path() / "glp_config_echo";
    std::filesystem::create_directories(dir);
    RunConfig cfg;
    cfg.values = {{"seed", "7"}, {"alpha", "0.5"}};
    write_resolved_config(dir.string(), cfg);

    const std::string text = slurp((dir / "config.resolved").string());
    CHECK(text == "# config_hash = " + cfg.hash() + "\nalpha = 0.5\nseed = 7\n");

    // The echo reparses to the same settings (the hash line is a comment).
    CHECK(parse_config_text(text) == cfg.values);
    std::filesystem::remove_all(dir);
}

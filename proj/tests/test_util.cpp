#include "doctest.h"
#include "helpers.hpp"

#include <thread>

using namespace mf;

TEST_CASE("csv parse handles quotes, embedded commas and CRLF") {
    const auto t = parse_csv("a,b,c\r\n1,\"x, y\",\"he said \"\"hi\"\"\"\r\n2,,z\n");
    REQUIRE(t.header == std::vector<std::string>{"a", "b", "c"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][1] == "x, y");
    CHECK(t.rows[0][2] == "he said \"hi\"");
    CHECK(t.rows[1][1] == "");
    CHECK(t.column("c") == 2);
    CHECK(t.column("nope") == -1);
}

TEST_CASE("csv_line round-trips through parse_csv") {
    const std::vector<std::string> fields{"plain", "with,comma", "with \"quote\"", ""};
    const auto t = parse_csv("h1,h2,h3,h4\n" + csv_line(fields));
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0] == fields);
}

TEST_CASE("format_double round-trips") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 12345.678, 0.0}) CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("fnv1a64 known vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("base64 float round trip") {
    std::vector<float> v{0.0f, -1.5f, 3.25e-7f, 1e30f};
    CHECK(base64_decode_floats(base64_encode(v)) == v);
}

TEST_CASE("rng is reproducible and roughly standard") {
    Rng a(11), b(11);
    double sum = 0, sq = 0;
    for (int i = 0; i < 20000; ++i) {
        const double x = a.normal();
        CHECK(x == b.normal());
        sum += x;
        sq += x * x;
    }
    CHECK(std::fabs(sum / 20000) < 0.05);
    CHECK(std::fabs(sq / 20000 - 1.0) < 0.05);
    Rng c(3);
    const std::vector<double> cum{0.2, 0.2, 1.0};
    for (int i = 0; i < 1000; ++i) CHECK(c.categorical(cum) != 1);
}

TEST_CASE("quantile is type 7") {
    CHECK(quantile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
    CHECK(quantile({4, 1, 3, 2}, 0.75) == doctest::Approx(3.25));
    CHECK(median({5, 1, 3}) == 3.0);
    CHECK(median({1, 2}) == 1.5);
}

TEST_CASE("parallel_for visits each index once") {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("parallel_for propagates exceptions") {
    CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                        if (i == 7) throw InputError("boom");
                    }),
                    InputError);
}

#include "doctest.h"
#include "helpers.hpp"
#include "mf/metrics.hpp"
#include "oracles.hpp"

using namespace mf;
using mf::test::random_simplex;

namespace {

CountryConfig schema() {
    return parse_country_config(R"({
      "country": "t",
      "attributes": [{"name": "age", "scale": "ordinal", "categories": ["y", "m", "o"]},
                     {"name": "area", "scale": "nominal", "categories": ["city", "farm"]}],
      "parties": [{"name": "A"}, {"name": "B"}],
      "templates": [{"id": 1, "text": "{age} {area}"}]
    })");
}

DistributionTable table(Source s, const std::string& attr, std::vector<std::vector<double>> rows) {
    DistributionTable t;
    t.source = s;
    t.attribute = attr;
    t.parties = {"A", "B"};
    t.categories = attr == "age" ? std::vector<std::string>{"y", "m", "o"} : std::vector<std::string>{"city", "farm"};
    t.rows = std::move(rows);
    return t;
}

}  // namespace

TEST_CASE("js distance spot values") {
    CHECK(js_distance({0.2, 0.8}, {0.2, 0.8}) == 0.0);
    CHECK(js_distance({1, 0}, {0, 1}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(js_distance({0.5, 0.5}, {1, 0}) == doctest::Approx(std::sqrt(1.5 - 0.75 * std::log2(3.0))).epsilon(1e-12));
    CHECK(js_distance({0.5, 0.5}, {1, 0}) == doctest::Approx(0.5579).epsilon(1e-4));
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        const auto p = random_simplex(5, rng), q = random_simplex(5, rng);
        CHECK(std::fabs(js_distance(p, q) - mf::test::js_by_definition(p, q)) < 1e-12);
    }
    CHECK_THROWS_AS(js_distance({0.5, 0.5}, {0.5, 0.6}), InputError);
    CHECK_THROWS_AS(js_distance({1.0}, {0.5, 0.5}), InputError);
}

TEST_CASE("js distance is a metric") {
    Rng rng(6);
    for (int i = 0; i < 100; ++i) {
        const auto p = random_simplex(4, rng), q = random_simplex(4, rng), r = random_simplex(4, rng);
        CHECK(std::fabs(js_distance(p, q) - js_distance(q, p)) <= 1e-9);
        CHECK(js_distance(p, p) <= 1e-9);
        CHECK(js_distance(p, r) <= js_distance(p, q) + js_distance(q, r) + 1e-9);
    }
}

TEST_CASE("wasserstein distance against exhaustive transport") {
    CHECK(wasserstein_distance({1, 0, 0}, {0, 0, 1}) == 2.0);
    CHECK(wasserstein_distance({0.3, 0.7}, {0.3, 0.7}) == 0.0);
    Rng rng(7);
    for (std::size_t n = 2; n <= 4; ++n)
        for (int i = 0; i < 25; ++i) {
            const auto p = random_simplex(n, rng), q = random_simplex(n, rng);
            CHECK(std::fabs(wasserstein_distance(p, q) - mf::test::brute_force_w1(p, q)) < 1e-6);
        }
}

TEST_CASE("normalized entropy") {
    CHECK(normalized_entropy({0.2, 0.2, 0.2, 0.2, 0.2}) == 1.0);
    CHECK(normalized_entropy({0, 1, 0}) == 0.0);
    CHECK(normalized_entropy({0.5, 0.25, 0.25}) == doctest::Approx(1.5 / std::log2(3.0)).epsilon(1e-12));
    CHECK(normalized_entropy({0.25, 0.5, 0.25}) == normalized_entropy({0.5, 0.25, 0.25}));
    CHECK(normalized_entropy({0.34, 0.33, 0.33}) < 1.0);
    CHECK_THROWS_AS(normalized_entropy({1.0}), InputError);
}

TEST_CASE("distance delta and win rates") {
    const auto cfg = schema();
    const auto survey = std::vector{table(Source::survey, "age", {{0.2, 0.3, 0.5}, {0.6, 0.2, 0.2}}),
                                    table(Source::survey, "area", {{0.4, 0.6}, {0.9, 0.1}})};
    auto latent = survey;
    for (auto& t : latent) t.source = Source::latent;
    const auto prob = std::vector{table(Source::prob, "age", {{1.0 / 3, 1.0 / 3, 1.0 / 3}, {0.6, 0.2, 0.2}}),
                                  table(Source::prob, "area", {{0.5, 0.5}, {0.5, 0.5}})};
    const auto recs = distance_delta(latent, prob, survey, cfg, "toy", "t");
    REQUIRE(recs.size() == 4);
    CHECK(recs[0].metric == Metric::wasserstein);
    CHECK(recs[2].metric == Metric::js);
    CHECK(recs[0].delta > 0);
    CHECK(recs[1].delta == 0.0);  // B's prob row equals the survey
    CHECK(recs[3].delta > 0);
    const auto overall = win_rates(recs, {});
    CHECK(overall[0].rate == 0.75);
    const auto by_attr = win_rates(recs, {"attribute"});
    REQUIRE(by_attr.size() == 2);
    CHECK(by_attr[0].key == std::vector<std::string>{"age"});
    CHECK(by_attr[0].rate == 0.5);

    const auto same = distance_delta(prob, prob, survey, cfg);
    for (const auto& r : same) CHECK(r.delta == 0.0);
    CHECK(win_rates(same, {})[0].rate == 0.0);
    CHECK_THROWS_AS(win_rates(recs, {"colour"}), InputError);
}

TEST_CASE("win rate counts strict wins") {
    std::vector<DistanceRecord> recs(4);
    const double d[] = {0.1, -0.1, 0.2, 0.0};
    for (int i = 0; i < 4; ++i) recs[i].delta = d[i];
    CHECK(win_rates(recs, {})[0].rate == 0.5);
    for (auto& r : recs) r.delta = 0.3;
    CHECK(win_rates(recs, {})[0].rate == 1.0);
}

TEST_CASE("win rate is invariant to a common monotone rescaling") {
    const auto cfg = schema();
    Rng rng(9);
    std::vector<DistributionTable> lat, pr, sv;
    for (const char* a : {"age", "area"}) {
        const std::size_t n = std::string(a) == "age" ? 3 : 2;
        lat.push_back(table(Source::latent, a, {random_simplex(n, rng), random_simplex(n, rng)}));
        pr.push_back(table(Source::prob, a, {random_simplex(n, rng), random_simplex(n, rng)}));
        sv.push_back(table(Source::survey, a, {random_simplex(n, rng), random_simplex(n, rng)}));
    }
    auto recs = distance_delta(lat, pr, sv, cfg);
    const double base = win_rates(recs, {})[0].rate;
    for (auto& r : recs) {
        r.d_latent = std::exp(3 * r.d_latent);
        r.d_prob = std::exp(3 * r.d_prob);
        r.delta = r.d_prob - r.d_latent;
    }
    CHECK(win_rates(recs, {})[0].rate == base);
}

TEST_CASE("entropy gate boundaries") {
    const auto survey = std::vector{table(Source::survey, "age", {{0.2, 0.3, 0.5}, {0.6, 0.2, 0.2}})};
    const auto latent = std::vector{table(Source::latent, "age", {{0.25, 0.25, 0.5}, {0.5, 0.3, 0.2}})};
    const auto prob = std::vector{table(Source::prob, "age", {{0.9, 0.05, 0.05}, {0.34, 0.33, 0.33}})};

    const auto noop = entropy_gate(latent, prob, survey, 1.0 + 1e-12);
    CHECK(noop.substitutions == 0);
    CHECK(noop.summaries.empty());
    CHECK(noop.combined[0].rows == prob[0].rows);

    const auto all = entropy_gate(latent, prob, survey, 0.0);
    CHECK(all.substitutions == 2);
    CHECK(all.combined[0].rows == latent[0].rows);

    const auto some = entropy_gate(latent, prob, survey, 0.85);
    CHECK(some.substitutions == 1);
    CHECK(some.rows[1].gated);
    CHECK(!some.rows[0].gated);
    REQUIRE(some.summaries.size() == 1);
    CHECK(some.summaries[0].median_error_change ==
          doctest::Approx(some.summaries[0].median_error_combined - some.summaries[0].median_error_prob));

    const auto low = std::vector{table(Source::prob, "age", {{1, 0, 0}, {0, 0.05, 0.95}})};
    CHECK(entropy_gate(latent, low, survey, 0.85).substitutions == 0);
}

TEST_CASE("conditional share errors") {
    JointTable s{{"A", "B"}, {"x", "y"}, {{0.5, 0.0}, {0.0, 0.5}}};
    CHECK(conditional_share_error(s, s, Conditional::party_given_category).median == 0.0);
    JointTable u{{"A", "B"}, {"x", "y"}, {{0.25, 0.25}, {0.25, 0.25}}};
    const auto e = conditional_share_error(u, s, Conditional::party_given_category);
    for (const auto& row : e.error)
        for (double v : row) CHECK(v == 0.5);
    CHECK(conditional_share_error(u, s, Conditional::category_given_party).median == 0.5);

    DistributionTable t = table(Source::latent, "area", {{0.5, 0.5}, {0.2, 0.8}});
    const auto j = joint_from_conditional(t, {0.25, 0.75});
    CHECK(j.mass[1][1] == doctest::Approx(0.6));
    const auto shares = survey_party_shares(parse_csv("party,weight\nA,1\nB,3\nC,10\n"), {"A", "B"});
    CHECK(shares == std::vector<double>{0.25, 0.75});
}

TEST_CASE("delta-entropy regression") {
    std::vector<double> e{0.1, 0.4, 0.5, 0.9}, d;
    for (double x : e) d.push_back(2 * x + 1);
    auto f = fit_delta_entropy(d, e);
    CHECK(f.slope == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(f.intercept == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.r == doctest::Approx(1.0).epsilon(1e-12));

    f = fit_delta_entropy({0.3, 0.3, 0.3}, {0.1, 0.5, 0.7});
    CHECK(f.slope == 0.0);

    Rng rng(3);
    std::vector<double> x, y;
    for (int i = 0; i < 40; ++i) {
        x.push_back(rng.uniform());
        y.push_back(rng.normal());
    }
    f = fit_delta_entropy(y, x);
    // Normal equations on the positive subset.
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (y[i] <= 0) continue;
        n += 1;
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    CHECK(std::fabs(f.slope - slope) < 1e-9);
    CHECK(std::fabs(f.intercept - (sy - slope * sx) / n) < 1e-9);
    CHECK(f.n == static_cast<std::size_t>(n));

    CHECK_THROWS_AS(fit_delta_entropy({0.1, 0.2, -1}, {0.1, 0.2, 0.3}), InputError);
    CHECK_THROWS_AS(fit_delta_entropy({0.1, 0.2, 0.3}, {0.5, 0.5, 0.5}), InputError);
}

TEST_CASE("report files") {
    std::vector<DistanceRecord> recs{{"m", "c", "age", "A", Metric::wasserstein, 0.1, 0.3, 0.2},
                                     {"m", "c", "area", "A", Metric::js, 0.2, 0.1, -0.1}};
    const auto csv = parse_csv(distance_records_csv(recs));
    CHECK(csv.rows.size() == 2);
    CHECK(csv.column("delta") >= 0);
    const auto svg = win_rate_svg(recs, "demo <title>");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("&lt;title&gt;") != std::string::npos);
    CHECK(svg.find("age") != std::string::npos);
}

#include "doctest.h"
#include "helpers.hpp"
#include "mf/aggregate.hpp"

using namespace mf;

namespace {

CountryConfig two_by_two() {
    return parse_country_config(R"({
      "country": "t",
      "attributes": [{"name": "age", "scale": "ordinal", "categories": ["young", "old"]},
                     {"name": "area", "scale": "nominal", "categories": ["city", "farm"]}],
      "parties": [{"name": "A"}, {"name": "B"}],
      "templates": [{"id": 1, "text": "p {age} {area} :"}, {"id": 2, "text": "{area} {age} vote"}]
    })");
}

Tokenizer tiny_vocab() {
    return Tokenizer({{"A", 0}, {"B", 1}, {"p", 2}, {"young", 3}, {"old", 4}, {"city", 5}, {"farm", 6}, {":", 7},
                      {"vote", 8}});
}

ActivationStore store_of(std::vector<std::vector<double>> raw, std::vector<double> cos, std::vector<std::size_t> party,
                         std::size_t personas, std::size_t templates) {
    ActivationStore s;
    s.parties = {"A", "B"};
    s.num_personas = personas;
    s.num_templates = templates;
    for (std::size_t k = 0; k < raw.size(); ++k) s.keys.push_back({party[k], 0, k, cos[k]});
    s.raw = std::move(raw);
    return s;
}

ScoreTable scores_of(std::vector<std::vector<double>> v, std::size_t templates = 1) {
    ScoreTable t;
    t.parties = {"A", "B"};
    t.num_templates = templates;
    t.num_personas = v[0].size() / templates;
    t.values = std::move(v);
    return t;
}

}  // namespace

TEST_CASE("restricted distribution equals masked renormalized softmax") {
    const std::vector<float> logits{0.3f, -1.0f, 2.0f, 0.0f, 5.0f};
    const auto r = restricted_distribution(logits, {1, 3, 0});
    std::vector<double> full = log_softmax(logits);
    const double z = std::exp(full[1]) + std::exp(full[3]) + std::exp(full[0]);
    CHECK(r[0] == doctest::Approx(std::exp(full[1]) / z).epsilon(1e-12));
    CHECK(r[1] == doctest::Approx(std::exp(full[3]) / z).epsilon(1e-12));
    CHECK(r[2] == doctest::Approx(std::exp(full[0]) / z).epsilon(1e-12));
}

TEST_CASE("record_activations reads the final-position coefficient") {
    auto cfg = two_by_two();
    cfg = with_templates(cfg, 1);
    const Tokenizer tok = tiny_vocab();
    const Model m = mf::test::random_model(mf::test::small_config(2, 16, 32, 9), 4);
    ValueVectorSelection sel;
    sel.party = "A";
    sel.party_token = 0;
    sel.aligned = {{1, 6, 0.9, 0.1}};
    const std::vector<Persona> personas{{0, {1, 0}, 1.0}};
    const auto store = record_activations(m, tok, {sel}, cfg, personas);
    REQUIRE(store.raw.size() == 1);
    REQUIRE(store.raw[0].size() == 1);
    const auto tr = forward(m, tok.encode("p old city :"));
    CHECK(store.raw[0][0] == tr.mlp_coeffs[1](3, 6));
    const auto probs = restricted_distribution(tr.final_logits, {0, 1});
    CHECK(store.party_probs[0][0] == probs[0]);

    const auto mean = record_activations(m, tok, {sel}, cfg, personas, {Readoff::mean_over_positions, 1});
    double s = 0;
    for (std::size_t t = 0; t < 4; ++t) s += tr.mlp_coeffs[1](t, 6);
    CHECK(mean.raw[0][0] == doctest::Approx(s / 4));
}

TEST_CASE("record_activations counts personas times templates") {
    const auto cfg = two_by_two();
    const Model m = mf::test::random_model(mf::test::small_config(2, 16, 32, 9), 5);
    ValueVectorSelection sel;
    sel.party = "B";
    sel.party_token = 1;
    sel.aligned = {{0, 1, 0.8, 0.1}, {1, 2, 0.7, 0.2}};
    const std::vector<Persona> personas{{0, {0, 0}, 1.0}, {1, {1, 1}, 1.0}};
    const auto a = record_activations(m, tiny_vocab(), {sel}, cfg, personas);
    const auto b = record_activations(m, tiny_vocab(), {sel}, cfg, personas, {Readoff::final_position, 3});
    CHECK(a.columns() == 4);
    CHECK(a.raw[1].size() == 4);
    CHECK(a.raw == b.raw);
    CHECK(a.party_probs == b.party_probs);
}

TEST_CASE("record_activations reports overlong prompts with ids") {
    const auto cfg = two_by_two();
    auto mc = mf::test::small_config(2, 16, 32, 9);
    mc.max_seq_len = 3;
    const Model m = mf::test::random_model(mc, 5);
    ValueVectorSelection sel;
    sel.party = "A";
    sel.party_token = 0;
    sel.aligned = {{0, 1, 0.8, 0.1}};
    try {
        record_activations(m, tiny_vocab(), {sel}, cfg, {{0, {0, 0}, 1.0}});
        FAIL("expected an overlong prompt error");
    } catch (const InputError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("persona 0") != std::string::npos);
        CHECK(msg.find("template 1") != std::string::npos);
    }
}

TEST_CASE("normalize and weight") {
    auto s = store_of({{1.0, 3.0}, {2.0, 2.0}}, {0.5, 0.9}, {0, 1}, 2, 1);
    normalize_and_weight(s);
    CHECK(s.weighted[0][0] == doctest::Approx(-0.5));
    CHECK(s.weighted[0][1] == doctest::Approx(0.5));
    CHECK(s.weighted[1] == std::vector<double>{0.0, 0.0});
    CHECK(s.sd[0] == doctest::Approx(1.0));

    auto neg = store_of({{1.0, 3.0}, {2.0, 2.0}}, {-0.5, 0.9}, {0, 1}, 2, 1);
    normalize_and_weight(neg);
    CHECK(neg.weighted[0][0] == -s.weighted[0][0]);
    CHECK(neg.weighted[0][1] == -s.weighted[0][1]);
}

TEST_CASE("party scores") {
    auto single = store_of({{1.0, 3.0, 2.0}}, {0.7}, {0}, 3, 1);
    normalize_and_weight(single);
    auto t = party_scores(single);
    CHECK(t.values[0] == single.weighted[0]);
    CHECK(t.undefined == std::vector<std::string>{"B"});
    CHECK(t.parties == std::vector<std::string>{"A"});

    auto sym = store_of({{1.0, 3.0}, {1.0, 3.0}}, {0.2, -0.2}, {1, 1}, 2, 1);
    normalize_and_weight(sym);
    const auto st = party_scores(sym);
    for (double v : st.values[0]) CHECK(v == 0.0);

    Rng rng(7);
    std::vector<std::vector<double>> raw(5, std::vector<double>(6));
    for (auto& r : raw)
        for (auto& v : r) v = rng.normal();
    auto five = store_of(raw, {0.9, -0.8, 0.7, 0.6, -0.95}, {0, 0, 0, 0, 0}, 3, 2);
    normalize_and_weight(five);
    const auto ft = party_scores(five);
    for (std::size_t c = 0; c < 6; ++c) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += five.weighted[k][c];
        CHECK(std::fabs(ft.values[0][c] - s / 5) < 1e-9);
    }

    auto none = store_of({}, {}, {}, 2, 1);
    normalize_and_weight(none);
    CHECK_THROWS_AS(party_scores(none), InputError);
}

TEST_CASE("latent distribution") {
    const auto cfg = two_by_two();
    const std::vector<Persona> personas{{0, {0, 0}, 1.0}, {1, {1, 0}, 1.0}, {2, {1, 1}, 1.0}, {3, {0, 1}, 1.0}};

    const auto flat = latent_distribution(scores_of({{0.3, 0.3, 0.3, 0.3}, {-1, -1, -1, -1}}), personas, cfg, 0);
    for (const auto& row : flat.rows) CHECK(row == std::vector<double>{0.5, 0.5});

    const auto shifted = latent_distribution(scores_of({{0.0, 0.4, 0.4, 0.0}, {1, 2, 3, 4}}), personas, cfg, 0);
    CHECK(shifted.rows[0] == std::vector<double>{0.0, 1.0});

    // Party floor: B's smallest score is 1; category means 2.5 and 2.5 -> 1.5 each.
    LatentOptions party_floor{LatentNorm::minshift, FloorRule::persona_min};
    const auto pf = latent_distribution(scores_of({{0.0, 0.4, 0.4, 0.0}, {1, 2, 3, 4}}), personas, cfg, 0, party_floor);
    CHECK(pf.rows[0] == std::vector<double>{0.0, 1.0});
    CHECK(pf.rows[1][0] == doctest::Approx(0.5));
    const auto pf_area = latent_distribution(scores_of({{0.0, 0.4, 0.4, 0.0}, {1, 2, 3, 4}}), personas, cfg, 1, party_floor);
    // area: city = personas 0,1 -> mean 1.5 - 1 = 0.5; farm = 2,3 -> 3.5 - 1 = 2.5.
    CHECK(pf_area.rows[1][0] == doctest::Approx(0.5 / 3.0));

    LatentOptions soft{LatentNorm::softmax, FloorRule::category_min};
    const auto sm = latent_distribution(scores_of({{0.0, 1.0, 1.0, 0.0}, {0, 0, 0, 0}}), personas, cfg, 0, soft);
    CHECK(sm.rows[0][1] == doctest::Approx(std::exp(1.0) / (1 + std::exp(1.0))));

    // Templates are averaged within each persona.
    const auto tj = latent_distribution(scores_of({{0, 2, 1, 1, 1, 1, 0, 0}, {0, 0, 0, 0, 0, 0, 0, 0}}, 2),
                                        personas, cfg, 0);
    // A: young = personas 0 and 3 -> (1 + 0) / 2, old -> 1.
    CHECK(tj.rows[0] == std::vector<double>{0.0, 1.0});
}

TEST_CASE("empty category gets zero mass") {
    const auto cfg = two_by_two();
    const std::vector<Persona> personas{{0, {0, 0}, 1.0}, {1, {0, 1}, 1.0}};
    const LatentOptions party_floor{LatentNorm::minshift, FloorRule::persona_min};
    const auto d = latent_distribution(scores_of({{0.1, 0.5}, {0.2, 0.3}}), personas, cfg, 0, party_floor);
    for (const auto& row : d.rows) CHECK(row == std::vector<double>{1.0, 0.0});
    // Under the category floor the lone populated cell shifts to zero: degenerate, so uniform.
    const auto c = latent_distribution(scores_of({{0.1, 0.5}, {0.2, 0.3}}), personas, cfg, 0);
    for (const auto& row : c.rows) CHECK(row == std::vector<double>{0.5, 0.5});
}

TEST_CASE("probability distribution") {
    const auto cfg = two_by_two();
    const std::vector<Persona> personas{{0, {0, 0}, 1.0}, {1, {1, 0}, 1.0}, {2, {1, 1}, 3.0}};
    const auto uni = probability_distribution(scores_of({{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}}), personas, cfg, 0);
    for (const auto& row : uni.rows) CHECK(row == std::vector<double>{0.5, 0.5});
    // A: young mean 0.8, old weighted mean (0.2 + 3 * 0.6) / 4 = 0.5.
    const auto d = probability_distribution(scores_of({{0.8, 0.2, 0.6}, {0.2, 0.8, 0.4}}), personas, cfg, 0);
    CHECK(d.rows[0][0] == doctest::Approx(0.8 / 1.3));

    // Model overload agrees with a uniform-logit model.
    ModelWeights w = zero_weights(mf::test::small_config(2, 16, 32, 9));
    const Model flat(mf::test::small_config(2, 16, 32, 9), w);
    const auto pm = probability_distribution(flat, tiny_vocab(), personas, cfg, {0, 1}, 1);
    for (const auto& row : pm.rows) CHECK(row == std::vector<double>{0.5, 0.5});
    CHECK_THROWS_AS(probability_distribution(flat, tiny_vocab(), personas, cfg, {0, 0}, 1), InputError);
}

TEST_CASE("survey distribution") {
    const auto cfg = two_by_two();
    auto csv = parse_csv("party,age,area,weight\nA,young,city,1\nA,young,city,1\nA,young,farm,1\nA,old,city,1\n"
                         "B,old,farm,1\nC,young,city,5\n");
    auto d = survey_distribution(csv, cfg, 0);
    CHECK(d.rows[0] == std::vector<double>{0.75, 0.25});
    CHECK(d.rows[1] == std::vector<double>{0.0, 1.0});
    for (auto& r : csv.rows) r[3] = "2";
    CHECK(survey_distribution(csv, cfg, 0).rows == d.rows);

    CHECK_THROWS_AS(survey_distribution(parse_csv("party,age,area,weight\nA,young,city,1\n"), cfg, 0), InputError);
    CHECK_THROWS_AS(survey_distribution(parse_csv("party,age,area,weight\nA,teen,city,1\nB,old,city,1\n"), cfg, 0),
                    InputError);
    CHECK_THROWS_AS(survey_distribution(parse_csv("party,age,area,weight\nA,old,city,0\nB,old,city,1\n"), cfg, 0),
                    InputError);
    CHECK_THROWS_AS(survey_distribution(std::filesystem::path("/nonexistent/survey.csv"), cfg, 0), InputError);
}

TEST_CASE("distribution csv round trip") {
    DistributionTable t;
    t.source = Source::prob;
    t.attribute = "age";
    t.parties = {"A", "B"};
    t.categories = {"young", "old"};
    t.rows = {{0.1, 0.9}, {1.0 / 3.0, 2.0 / 3.0}};
    DistributionTable u = t;
    u.source = Source::latent;
    const auto back = distributions_from_csv(distributions_to_csv({t, u}));
    REQUIRE(back.size() == 2);
    CHECK(back[0].rows == t.rows);
    CHECK(back[1].source == Source::latent);
    CHECK(back[0].row("B")[1] == 2.0 / 3.0);
}

TEST_CASE("activation store persistence") {
    auto s = store_of({{1.0, 3.0, 2.5, 0.5}}, {0.7}, {1}, 2, 2);
    s.party_tokens = {4, 5};
    s.party_probs = {{0.1, 0.2, 0.3, 0.4}, {0.9, 0.8, 0.7, 0.6}};
    normalize_and_weight(s);
    const auto dir = mf::test::scratch("store");
    save_activation_store(s, dir / "a.mfw");
    const auto b = load_activation_store(dir / "a.mfw");
    CHECK(b.parties == s.parties);
    CHECK(b.keys.size() == 1);
    CHECK(b.keys[0].party == 1);
    CHECK(b.num_templates == 2);
    // Float32 payload.
    CHECK(b.raw[0][1] == 3.0);
    CHECK(b.weighted[0][0] == doctest::Approx(s.weighted[0][0]).epsilon(1e-6));
    CHECK(b.party_probs[1][3] == doctest::Approx(0.6).epsilon(1e-6));
}

#include "doctest.h"
#include "helpers.hpp"

#include <cmath>

using namespace mf;
using mf::test::random_model;
using mf::test::small_config;

namespace {

double rel_err(const Vec& a, const Vec& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * static_cast<double>(a[i] - b[i]);
        den += static_cast<double>(b[i]) * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

Vec random_vec(std::size_t n, Rng& rng) {
    Vec v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

}  // namespace

TEST_CASE("config validation") {
    auto c = small_config();
    CHECK_NOTHROW(c.validate());
    c.num_heads = 3;
    CHECK_THROWS_AS(c.validate(), InputError);
    c = small_config();
    c.mlp_dim = 8;
    CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("single token residual equals its embedding row") {
    const auto cfg = small_config();
    Rng rng(5);
    ModelWeights w = zero_weights(cfg);
    for (auto& x : w.embed.data) x = static_cast<float>(rng.normal());
    const Model m(cfg, w);
    const auto tr = forward(m, {7});
    for (std::size_t k = 0; k < cfg.model_dim; ++k) CHECK(tr.residuals[0](0, k) == w.embed(7, k));
}

TEST_CASE("residual increments equal attention plus MLP outputs") {
    const auto cfg = small_config(3);
    const Model m = random_model(cfg, 17);
    const auto tr = forward(m, {1, 4, 9, 2, 2, 11});
    for (std::size_t l = 0; l < cfg.num_layers; ++l)
        for (std::size_t p = 0; p < tr.seq_len(); ++p) {
            Vec diff(cfg.model_dim), sum(cfg.model_dim);
            for (std::size_t k = 0; k < cfg.model_dim; ++k) {
                diff[k] = tr.residuals[l + 1](p, k) - tr.residuals[l](p, k);
                sum[k] = tr.attn_out[l](p, k) + tr.mlp_out[l](p, k);
            }
            CHECK(rel_err(diff, sum) < 1e-5);
        }
}

TEST_CASE("forward is bit-identical across runs") {
    const Model m = random_model(small_config(), 42);
    const std::vector<int> prompt{3, 1, 4, 1, 5, 9, 2, 6};
    CHECK(forward(m, prompt).final_logits == forward(m, prompt).final_logits);
}

TEST_CASE("forward rejects bad input") {
    const Model m = random_model(small_config(), 1);
    CHECK_THROWS_AS(forward(m, {}), InputError);
    CHECK_THROWS_AS(forward(m, {99}), InputError);
    CHECK_THROWS_AS(forward(m, std::vector<int>(17, 0)), InputError);
}

TEST_CASE("causal attention: later tokens do not affect earlier positions") {
    const Model m = random_model(small_config(), 8);
    const auto a = forward(m, {1, 2, 3});
    const auto b = forward(m, {1, 2, 3, 20, 21});
    for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t k = 0; k < 16; ++k) CHECK(a.residuals[2](p, k) == b.residuals[2](p, k));
}

TEST_CASE("mlp sub-updates reconstruct the MLP output") {
    Rng rng(99);
    const auto cfg = small_config(2, 16, 16);
    const Model m = random_model(cfg, 3);
    for (int trial = 0; trial < 10; ++trial) {
        const Vec x = random_vec(cfg.model_dim, rng);
        const auto subs = mlp_sub_updates(m, trial % 2, x);
        REQUIRE(subs.size() == cfg.mlp_dim);
        Vec sum(cfg.model_dim, 0.0f);
        for (const auto& s : subs)
            for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += s.coefficient * s.value[k];
        CHECK(rel_err(sum, mlp_output(m, trial % 2, x)) < 1e-5);
    }
}

TEST_CASE("zero input gives f(0) coefficients and zero output") {
    const auto cfg = small_config();
    const Model m = random_model(cfg, 4);
    const Vec zero(cfg.model_dim, 0.0f);
    for (const auto& s : mlp_sub_updates(m, 0, zero)) CHECK(s.coefficient == m.activation(0.0f));
    for (float v : mlp_output(m, 0, zero)) CHECK(v == 0.0f);
}

TEST_CASE("a single nonzero key row moves exactly one coefficient") {
    const auto cfg = small_config();
    ModelWeights w = random_model(cfg, 6).weights();
    auto& key = w.layers[1].mlp_key;
    std::fill(key.data.begin(), key.data.end(), 0.0f);
    for (std::size_t k = 0; k < cfg.model_dim; ++k) key(5, k) = 1.0f;
    const Model m(cfg, w);
    Rng rng(1);
    const auto subs = mlp_sub_updates(m, 1, random_vec(cfg.model_dim, rng));
    int moved = 0;
    for (const auto& s : subs) moved += s.coefficient != m.activation(0.0f);
    CHECK(moved == 1);
    CHECK(subs[5].coefficient != m.activation(0.0f));
}

TEST_CASE("sign inversion matches an independent hooked forward") {
    const auto cfg = small_config(3);
    const Model m = random_model(cfg, 21);
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> ids(3 + trial % 5);
        for (auto& t : ids) t = static_cast<int>(rng.bits() % cfg.vocab_size);
        const auto tr = forward(m, ids);
        const std::size_t layer = rng.bits() % cfg.num_layers;
        const std::size_t neuron = rng.bits() % cfg.mlp_dim;
        const std::size_t pos = rng.bits() % ids.size();
        const int target = static_cast<int>(rng.bits() % cfg.vocab_size);

        const float mc = tr.mlp_coeffs[layer](pos, neuron);
        const Vec v = m.value_vector(layer, neuron);
        const auto edited = forward(m, ids, [&](std::size_t l, Matrix& r) {
            if (l != layer) return;
            for (std::size_t k = 0; k < v.size(); ++k) r(pos, k) -= 2.0f * mc * v[k];
        });
        const double expect = log_softmax(tr.final_logits)[target] - log_softmax(edited.final_logits)[target];
        CHECK(sign_inversion_delta(m, tr, layer, neuron, target, pos) == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("sign inversion of a silent neuron is exactly zero") {
    const auto cfg = small_config();
    ModelWeights w = random_model(cfg, 13).weights();
    for (std::size_t k = 0; k < cfg.model_dim; ++k) w.layers[0].mlp_key(3, k) = 0.0f;
    const Model m(cfg, w);
    const auto tr = forward(m, {1, 2, 3, 4});
    REQUIRE(tr.mlp_coeffs[0](3, 3) == 0.0f);
    CHECK(sign_inversion_delta(m, tr, 0, 3, 5, 3) == 0.0);
}

TEST_CASE("a neuron writing toward a token's unembedding has positive effect") {
    const auto cfg = small_config();
    ModelWeights w = random_model(cfg, 31, 0.5).weights();
    const Model base(cfg, w);
    const std::vector<int> ids{2, 7, 1, 8};
    const auto tr0 = forward(base, ids);
    const std::size_t last = ids.size() - 1, L = cfg.num_layers - 1, n = 4;
    const int target = 11;
    double nn = 0;
    for (std::size_t k = 0; k < cfg.model_dim; ++k) nn += tr0.mlp_in[L](last, k) * tr0.mlp_in[L](last, k);
    for (std::size_t k = 0; k < cfg.model_dim; ++k) {
        w.layers[L].mlp_key(n, k) = static_cast<float>(3.0 * tr0.mlp_in[L](last, k) / nn);
        w.layers[L].mlp_value(k, n) = w.unembed(target, k);
    }
    const Model m(cfg, w);
    const auto tr = forward(m, ids);
    REQUIRE(tr.mlp_coeffs[L](last, n) > 0.0f);
    CHECK(sign_inversion_delta(m, tr, L, n, target, last) > 0.0);
}

TEST_CASE("next token distribution closed forms") {
    ForwardTrace tr;
    const float ln3 = static_cast<float>(std::log(3.0));
    tr.final_logits = {0.0f, ln3};
    const auto p = next_token_distribution(tr);
    // Exact for the stored float logit; ln 3 itself is only float-close.
    const double p1 = 1.0 / (1.0 + std::exp(-static_cast<double>(ln3)));
    CHECK(std::fabs(p[1] - p1) < 1e-12);
    CHECK(std::fabs(p[0] - (1.0 - p1)) < 1e-12);
    CHECK(std::fabs(p[0] - 0.25) < 1e-7);
    CHECK(std::fabs(p[1] - 0.75) < 1e-7);
    tr.final_logits.assign(7, 1.5f);
    for (double x : next_token_distribution(tr)) CHECK(x == doctest::Approx(1.0 / 7).epsilon(1e-12));
}

TEST_CASE("mean_pool") {
    const auto cfg = small_config();
    const Model m = random_model(cfg, 77);
    const auto one = forward(m, {5});
    const Vec p1 = mean_pool(one, 1);
    for (std::size_t k = 0; k < cfg.model_dim; ++k) CHECK(p1[k] == one.residuals[1](0, k));

    const auto tr = forward(m, {3, 3, 8, 1, 0});
    for (std::size_t l = 0; l <= cfg.num_layers; ++l) {
        const Vec pooled = mean_pool(tr, l);
        for (std::size_t k = 0; k < cfg.model_dim; ++k) {
            double s = 0;
            for (std::size_t p = 0; p < 5; ++p) s += tr.residuals[l](p, k);
            CHECK(pooled[k] == doctest::Approx(s / 5).epsilon(1e-7));
        }
    }

    ForwardTrace sym;
    sym.token_ids = {0, 1};
    Matrix r(2, 3);
    for (std::size_t k = 0; k < 3; ++k) {
        r(0, k) = static_cast<float>(k + 1);
        r(1, k) = -static_cast<float>(k + 1);
    }
    sym.residuals = {r};
    for (float x : mean_pool(sym, 0)) CHECK(x == 0.0f);
}

TEST_CASE("model save/load round trip and load errors") {
    const auto dir = mf::test::scratch("model");
    auto cfg = small_config(4);
    const Model m = random_model(cfg, 9);
    save_model(m, dir / "m.mfw", R"({"note":"x"})");
    const Model back = load_model(dir / "m.mfw");
    CHECK(back.config().num_layers == 4);
    CHECK(back.weights().unembed == m.weights().unembed);
    CHECK(back.layer(2).mlp_value == m.layer(2).mlp_value);
    CHECK(read_container(dir / "m.mfw").metadata_json.find("\"note\"") != std::string::npos);

    auto rewrite = [&](const std::string& name, auto&& edit, const std::filesystem::path& out) {
        Container c = read_container(dir / "m.mfw");
        std::vector<NamedTensor> ts;
        for (auto& [n, t] : c.tensors) {
            if (n == name) edit(t);
            ts.push_back(t);
        }
        write_container(out, ts, c.metadata_json);
    };
    rewrite("layer.2.wv", [&](NamedTensor& t) {
        t.shape = {cfg.model_dim, cfg.mlp_dim - 1};
        t.values.resize(cfg.model_dim * (cfg.mlp_dim - 1));
    }, dir / "bad_width.mfw");
    try {
        load_model(dir / "bad_width.mfw");
        FAIL("expected a load error");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("W_V layer 2") != std::string::npos);
    }
    rewrite("unembed", [](NamedTensor& t) { t.values[3] = std::nanf(""); }, dir / "nan.mfw");
    CHECK_THROWS_AS(load_model(dir / "nan.mfw"), InputError);

    write_file(dir / "junk.mfw", "not a weights file at all");
    CHECK_THROWS_AS(load_model(dir / "junk.mfw"), InputError);
    CHECK_THROWS_AS(load_model(dir / "missing.mfw"), InputError);
}

TEST_CASE("tokenizer greedy longest match and persistence") {
    const Tokenizer tok({{"a", 0}, {"ab", 1}, {"abc", 2}, {"b", 3}, {"c", 4}, {",", 5}});
    CHECK(tok.encode("abc ab, c") == std::vector<int>{2, 1, 5, 4});
    CHECK(tok.encode("abab") == std::vector<int>{1, 1});
    CHECK_THROWS_AS(tok.encode("abz"), InputError);
    CHECK(tok.id("ab") == 1);
    CHECK(!tok.id("zz"));
    CHECK(tok.surface(4) == "c");
    const auto dir = mf::test::scratch("tok");
    tok.save(dir / "t.json");
    CHECK(Tokenizer::load(dir / "t.json").vocab() == tok.vocab());
    CHECK_THROWS_AS(Tokenizer({{"a", 0}, {"b", 2}}), InputError);
}

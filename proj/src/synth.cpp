#include "mf/synth.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"
#include "mf/util.hpp"

namespace mf {

using json = nlohmann::json;

namespace {

const std::vector<std::string> kFiller = {"we",   "should", "the",   "our",  "for",    "and",   "more",
                                          "people", "must", "back",  "plan", "new",    "every", "a",
                                          "to",   "of",     "better", "now", "policy", "keep"};

const std::vector<std::string> kTopics = {"solar",   "rail",     "housing",  "wages",    "clinics",  "tuition",
                                          "borders", "police",   "tariffs",  "farms",    "chapels",  "army",
                                          "startups", "markets", "privacy",  "bandwidth", "taxcuts", "permits",
                                          "pensions", "ferries", "forests",  "rivers",   "libraries", "cycling"};

constexpr std::size_t kTopicsPerParty = 6;

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

std::vector<std::string> topic_words(std::size_t party, std::size_t parties) {
    std::vector<std::string> out;
    for (std::size_t t = 0; t < kTopicsPerParty; ++t) {
        const std::size_t idx = party * kTopicsPerParty + t;
        out.push_back(parties * kTopicsPerParty <= kTopics.size() ? kTopics[idx] : "issue" + std::to_string(idx));
    }
    return out;
}

// Template words that are not placeholders.
std::vector<std::string> template_words(const std::vector<std::string>& templates) {
    std::vector<std::string> out;
    for (const auto& t : templates)
        for (const auto& w : split_words(t))
            if (!(w.size() > 2 && w.front() == '{' && w.back() == '}')) out.push_back(w);
    return out;
}

Vec random_unit(Rng& rng, std::size_t d) {
    Vec v(d);
    double n = 0.0;
    for (auto& x : v) {
        x = static_cast<float>(rng.normal());
        n += static_cast<double>(x) * x;
    }
    n = std::sqrt(n);
    for (auto& x : v) x = static_cast<float>(x / n);
    return v;
}

// Gram-Schmidt on seeded Gaussian vectors.
std::vector<Vec> orthonormal_basis(Rng& rng, std::size_t count, std::size_t d) {
    std::vector<std::vector<double>> basis;
    while (basis.size() < count) {
        std::vector<double> v(d);
        for (auto& x : v) x = rng.normal();
        for (const auto& b : basis) {
            double p = 0.0;
            for (std::size_t i = 0; i < d; ++i) p += v[i] * b[i];
            for (std::size_t i = 0; i < d; ++i) v[i] -= p * b[i];
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        basis.push_back(std::move(v));
    }
    std::vector<Vec> out;
    for (const auto& b : basis) out.emplace_back(b.begin(), b.end());
    return out;
}

void fill_noise(Matrix& m, Rng& rng, double sd) {
    for (auto& x : m.data) x = static_cast<float>(sd * rng.normal());
}

double project(std::span<const float> x, const Vec& dir) { return dot_d(x, dir); }

json config_json(const ModelConfig& c) {
    return {{"num_layers", c.num_layers}, {"model_dim", c.model_dim},  {"mlp_dim", c.mlp_dim},
            {"num_heads", c.num_heads},   {"max_seq_len", c.max_seq_len},
            {"activation", c.activation == Activation::gelu ? "gelu" : "silu"}};
}

}  // namespace

std::size_t PlantSpec::layer() const {
    return planted_layer ? *planted_layer : static_cast<std::size_t>(std::floor(0.6 * static_cast<double>(model.num_layers)));
}

void PlantSpec::validate() const {
    const auto& m = model;
    if (m.num_layers < 2 || m.num_layers > 6) throw InputError("plant spec: num_layers must be in [2, 6]");
    if (m.model_dim == 0 || m.model_dim > 64) throw InputError("plant spec: model_dim must be in [1, 64]");
    if (m.num_heads < 2 || m.model_dim % m.num_heads != 0)
        throw InputError("plant spec: need >= 2 heads dividing model_dim");
    if (parties.size() < 2) throw InputError("plant spec: need at least 2 parties");
    if (m.head_dim() < parties.size() + 1) throw InputError("plant spec: head_dim too small for the party count");
    if (2 + 2 * parties.size() > m.model_dim) throw InputError("plant spec: model_dim too small for the party count");
    const std::size_t planted = parties.size() * (aligned_per_party + diametric_per_party);
    if (planted == 0) throw InputError("plant spec: no planted neurons");
    if (planted > m.mlp_dim)
        throw InputError("plant spec: " + std::to_string(planted) + " planted neurons exceed mlp_dim " +
                         std::to_string(m.mlp_dim));
    if (layer() >= m.num_layers) throw InputError("plant spec: planted layer out of range");
    if (gamma < 0.0 || !std::isfinite(gamma)) throw InputError("plant spec: gamma must be >= 0");
    if (templates.empty()) throw InputError("plant spec: no templates");
    if (holdout_every < 2) throw InputError("plant spec: holdout_every must be >= 2");
    if (statements < parties.size() * holdout_every)
        throw InputError("plant spec: too few statements for a holdout split");

    std::set<std::string> words;
    auto add = [&](const std::string& w, const char* what) {
        if (w.empty() || std::any_of(w.begin(), w.end(), [](unsigned char c) { return std::isspace(c); }))
            throw InputError(std::string("plant spec: ") + what + " '" + w + "' must be one word");
        if (!words.insert(w).second) throw InputError(std::string("plant spec: duplicate token '") + w + "'");
    };
    for (const auto& p : parties) add(p, "party");
    for (const auto& a : attributes) {
        if (a.categories.size() < 2) throw InputError("plant spec: attribute '" + a.name + "' needs >= 2 categories");
        if (a.log_odds.size() != a.categories.size())
            throw InputError("plant spec: attribute '" + a.name + "' log-odds rows do not match categories");
        for (const auto& row : a.log_odds)
            if (row.size() != parties.size())
                throw InputError("plant spec: attribute '" + a.name + "' log-odds columns do not match parties");
        for (const auto& c : a.categories) add(c, "category");
    }
    for (std::size_t o = 0; o < parties.size(); ++o)
        for (const auto& t : topic_words(o, parties.size())) add(t, "topic");
    for (const auto& w : template_words(templates))
        if (words.count(w)) throw InputError("plant spec: template word '" + w + "' collides with a planted token");
    for (const auto& w : kFiller)
        if (words.count(w)) throw InputError("plant spec: filler word '" + w + "' collides with a planted token");
}

PlantSpec default_plant_spec() {
    PlantSpec s;
    s.model.num_layers = 4;
    s.model.model_dim = 64;
    s.model.mlp_dim = 128;
    s.model.num_heads = 4;
    s.model.max_seq_len = 40;
    s.model.activation = Activation::gelu;
    s.parties = {"Aurora", "Bastion", "Cascade"};
    s.attributes = {
        {"age", Scale::ordinal, {"young", "adult", "middleaged", "senior"},
         {{0.9, -0.7, -0.2}, {0.4, -0.2, -0.2}, {-0.3, 0.2, 0.1}, {-0.8, 0.8, 0.0}}},
        {"gender", Scale::nominal, {"female", "male"}, {{0.3, -0.3, 0.0}, {-0.3, 0.3, 0.0}}},
        {"education", Scale::ordinal, {"basic", "secondary", "tertiary"},
         {{-0.6, 0.5, 0.1}, {0.0, 0.0, 0.0}, {0.7, -0.6, -0.1}}},
        {"income", Scale::ordinal, {"lowincome", "midincome", "highincome"},
         {{0.2, -0.6, 0.4}, {0.0, 0.1, -0.1}, {-0.3, 0.6, -0.3}}},
        {"settlement", Scale::nominal, {"urban", "suburban", "rural"},
         {{0.8, -0.8, 0.0}, {-0.1, 0.2, -0.1}, {-0.5, 0.4, 0.1}}},
        {"priority", Scale::nominal, {"climate", "economy", "security"},
         {{-0.4, 0.1, 0.3}, {0.1, 0.6, -0.7}, {0.3, -0.6, 0.3}}},
    };
    s.templates = {
        "voter : {age} , {gender} , {education} , {income} , {settlement} , {priority} . party :",
        "a {age} {gender} voter with {education} schooling , {income} earnings , {settlement} home and {priority} "
        "focus picks",
        "respondent ( {age} {gender} {education} {income} {settlement} {priority} ) chooses",
        "this {gender} citizen is {age} , lives somewhere {settlement} , has {education} school , {income} pay and "
        "puts {priority} first . ballot :",
        "profile = {priority} {settlement} {income} {education} {gender} {age} ; choice =",
        "asked about the election , a {settlement} {gender} with {education} training and {income} means , aged "
        "{age} , caring for {priority} , answers",
        "{age} / {gender} / {education} / {income} / {settlement} / {priority} -> party",
        "record : age {age} gender {gender} school {education} income {income} place {settlement} issue {priority} "
        "vote",
        "imagine a {priority} minded {age} {gender} from a {settlement} district with {income} income and {education} "
        "degree . they back",
        "next respondent , {gender} , {age} , {settlement} , {income} , {education} , {priority} , selects",
    };
    return s;
}

PlantSpec parse_plant_spec(const std::string& json_text) {
    PlantSpec s = default_plant_spec();
    try {
        json j = json::parse(json_text);
        if (j.contains("model")) {
            const auto& m = j["model"];
            s.model.num_layers = m.value("num_layers", s.model.num_layers);
            s.model.model_dim = m.value("model_dim", s.model.model_dim);
            s.model.mlp_dim = m.value("mlp_dim", s.model.mlp_dim);
            s.model.num_heads = m.value("num_heads", s.model.num_heads);
            s.model.max_seq_len = m.value("max_seq_len", s.model.max_seq_len);
            const std::string act = m.value("activation", std::string("gelu"));
            if (act == "gelu") s.model.activation = Activation::gelu;
            else if (act == "silu") s.model.activation = Activation::silu;
            else throw InputError("plant spec: unknown activation '" + act + "'");
        }
        if (j.contains("parties")) s.parties = j["parties"].get<std::vector<std::string>>();
        if (j.contains("attributes")) {
            s.attributes.clear();
            for (const auto& a : j["attributes"]) {
                PlantAttribute pa;
                pa.name = a.at("name").get<std::string>();
                const std::string scale = a.value("scale", std::string("nominal"));
                if (scale != "nominal" && scale != "ordinal") throw InputError("plant spec: unknown scale '" + scale + "'");
                pa.scale = scale == "ordinal" ? Scale::ordinal : Scale::nominal;
                pa.categories = a.at("categories").get<std::vector<std::string>>();
                pa.log_odds = a.at("log_odds").get<std::vector<std::vector<double>>>();
                s.attributes.push_back(std::move(pa));
            }
        }
        if (j.contains("templates")) s.templates = j["templates"].get<std::vector<std::string>>();
        if (j.contains("planted_layer")) s.planted_layer = j["planted_layer"].get<std::size_t>();
        s.aligned_per_party = j.value("aligned_per_party", s.aligned_per_party);
        s.diametric_per_party = j.value("diametric_per_party", s.diametric_per_party);
        s.gamma = j.value("gamma", s.gamma);
        s.seed = j.value("seed", s.seed);
        s.statements = j.value("statements", s.statements);
        s.holdout_every = j.value("holdout_every", s.holdout_every);
        if (j.contains("strengths")) {
            const auto& g = j["strengths"];
            auto& t = s.strengths;
            t.residual_scale = g.value("residual_scale", t.residual_scale);
            t.topic_strength = g.value("topic_strength", t.topic_strength);
            t.marker_strength = g.value("marker_strength", t.marker_strength);
            t.affinity_strength = g.value("affinity_strength", t.affinity_strength);
            t.query_gain = g.value("query_gain", t.query_gain);
            t.value_gain = g.value("value_gain", t.value_gain);
            t.key_bias = g.value("key_bias", t.key_bias);
            t.key_spread = g.value("key_spread", t.key_spread);
            t.value_scale = g.value("value_scale", t.value_scale);
            t.norm_boost = g.value("norm_boost", t.norm_boost);
            t.noise = g.value("noise", t.noise);
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("plant spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::string plant_spec_to_json(const PlantSpec& s) {
    json j;
    j["model"] = config_json(s.model);
    j["parties"] = s.parties;
    j["attributes"] = json::array();
    for (const auto& a : s.attributes)
        j["attributes"].push_back({{"name", a.name},
                                   {"scale", a.scale == Scale::ordinal ? "ordinal" : "nominal"},
                                   {"categories", a.categories},
                                   {"log_odds", a.log_odds}});
    j["templates"] = s.templates;
    j["planted_layer"] = s.layer();
    j["aligned_per_party"] = s.aligned_per_party;
    j["diametric_per_party"] = s.diametric_per_party;
    j["gamma"] = s.gamma;
    j["seed"] = s.seed;
    j["statements"] = s.statements;
    j["holdout_every"] = s.holdout_every;
    const auto& t = s.strengths;
    j["strengths"] = {{"residual_scale", t.residual_scale},   {"topic_strength", t.topic_strength},
                      {"marker_strength", t.marker_strength}, {"affinity_strength", t.affinity_strength},
                      {"query_gain", t.query_gain},           {"value_gain", t.value_gain},
                      {"key_bias", t.key_bias},               {"key_spread", t.key_spread},
                      {"value_scale", t.value_scale},         {"norm_boost", t.norm_boost},
                      {"noise", t.noise}};
    return j.dump(2) + "\n";
}

CountryConfig synth_country(const PlantSpec& spec) {
    json j;
    j["country"] = "synthetica";
    j["language"] = "en";
    j["attributes"] = json::array();
    for (const auto& a : spec.attributes)
        j["attributes"].push_back(
            {{"name", a.name}, {"scale", a.scale == Scale::ordinal ? "ordinal" : "nominal"}, {"categories", a.categories}});
    j["parties"] = json::array();
    for (const auto& p : spec.parties) j["parties"].push_back({{"name", p}, {"canonical_token_string", p}});
    j["templates"] = json::array();
    for (std::size_t t = 0; t < spec.templates.size(); ++t)
        j["templates"].push_back({{"id", static_cast<int>(t + 1)}, {"text", spec.templates[t]}});
    return parse_country_config(j.dump());
}

namespace {

Tokenizer synth_tokenizer(const PlantSpec& spec) {
    std::map<std::string, int> vocab;
    int next = 0;
    auto add = [&](const std::string& w) {
        if (vocab.emplace(w, next).second) ++next;
    };
    for (const auto& p : spec.parties) add(p);
    for (const auto& a : spec.attributes)
        for (const auto& c : a.categories) add(c);
    for (std::size_t o = 0; o < spec.parties.size(); ++o)
        for (const auto& t : topic_words(o, spec.parties.size())) add(t);
    for (const auto& w : kFiller) add(w);
    for (const auto& w : template_words(spec.templates)) add(w);
    return Tokenizer(vocab);
}

// Category log-odds centered over parties.
std::vector<double> centered(const std::vector<double>& row) {
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
    std::vector<double> out(row);
    for (double& v : out) v -= mean;
    return out;
}

struct Directions {
    Vec bias, marker;
    std::vector<Vec> party, affinity;
};

}  // namespace

PlantedModel plant_model(const PlantSpec& spec) {
    spec.validate();
    const auto& st = spec.strengths;
    Tokenizer tok = synth_tokenizer(spec);
    CountryConfig country = synth_country(spec);
    ModelConfig cfg = spec.model;
    cfg.vocab_size = tok.size();
    cfg.validate();
    const std::size_t d = cfg.model_dim, P = spec.parties.size(), hd = cfg.head_dim();
    const std::size_t lp = spec.layer(), last = cfg.num_layers - 1;

    Rng rng(spec.seed);
    auto basis = orthonormal_basis(rng, 2 + 2 * P, d);
    Directions dir;
    dir.bias = basis[0];
    dir.marker = basis[1];
    for (std::size_t o = 0; o < P; ++o) {
        dir.party.push_back(basis[2 + o]);
        dir.affinity.push_back(basis[2 + P + o]);
    }

    const double sd = st.noise / std::sqrt(static_cast<double>(d));
    ModelWeights w = zero_weights(cfg);
    fill_noise(w.embed, rng, sd);
    fill_noise(w.pos_embed, rng, sd);
    fill_noise(w.unembed, rng, sd);
    for (auto& L : w.layers) {
        fill_noise(L.wq, rng, sd);
        fill_noise(L.wk, rng, sd);
        fill_noise(L.wv, rng, sd);
        fill_noise(L.wo, rng, sd);
        fill_noise(L.mlp_key, rng, sd);
        fill_noise(L.mlp_value, rng, sd);
    }

    // Embeddings: shared bias everywhere, party direction on topic words,
    // marker plus centered log-odds on category words.
    for (std::size_t t = 0; t < cfg.vocab_size; ++t)
        for (std::size_t c = 0; c < d; ++c) w.embed(t, c) += static_cast<float>(st.residual_scale * dir.bias[c]);
    for (std::size_t o = 0; o < P; ++o)
        for (const auto& word : topic_words(o, P)) {
            const int id = *tok.id(word);
            for (std::size_t c = 0; c < d; ++c) w.embed(id, c) += static_cast<float>(st.topic_strength * dir.party[o][c]);
        }
    for (const auto& a : spec.attributes)
        for (std::size_t g = 0; g < a.categories.size(); ++g) {
            const int id = *tok.id(a.categories[g]);
            const auto beta = centered(a.log_odds[g]);
            for (std::size_t c = 0; c < d; ++c) {
                double v = st.marker_strength * dir.marker[c];
                for (std::size_t o = 0; o < P; ++o) v += st.affinity_strength * beta[o] * dir.affinity[o][c];
                w.embed(id, c) += static_cast<float>(v);
            }
        }

    // Layer 0, head 0: the query reads the bias direction, the key reads the
    // marker, so late positions attend to category words. Value/output copy the
    // affinity subspace.
    {
        auto& L = w.layers[0];
        for (std::size_t r = 0; r < hd; ++r)
            for (std::size_t c = 0; c < d; ++c) {
                L.wq(r, c) = 0.0f;
                L.wk(r, c) = 0.0f;
            }
        for (std::size_t c = 0; c < d; ++c) {
            L.wq(0, c) = static_cast<float>(st.query_gain * dir.bias[c]);
            L.wk(0, c) = dir.marker[c];
        }
        for (std::size_t o = 0; o < P; ++o) {
            for (std::size_t c = 0; c < d; ++c) {
                L.wv(1 + o, c) = dir.affinity[o][c];
                L.wo(c, 1 + o) = static_cast<float>(st.value_gain * dir.affinity[o][c]);
            }
        }
    }
    // Last layer, head 1: writes a large constant along the bias direction so
    // the final norm barely depends on the persona.
    {
        auto& L = w.layers[last];
        for (std::size_t c = 0; c < d; ++c) {
            L.wv(hd, c) = dir.bias[c];
            L.wo(c, hd) = static_cast<float>(st.norm_boost * dir.bias[c]);
        }
    }

    // Planted neurons at scattered indices.
    std::vector<std::size_t> order(cfg.mlp_dim);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.bits() % (i + 1)]);
    PlantedModel out{Model(cfg, w), tok, country, party_token_ids(country, tok), {}, 0.0, 0.0};
    std::size_t next = 0;
    for (std::size_t o = 0; o < P; ++o) {
        for (std::size_t k = 0; k < spec.aligned_per_party; ++k)
            out.neurons.push_back({spec.parties[o], lp, order[next++], true});
        for (std::size_t k = 0; k < spec.diametric_per_party; ++k)
            out.neurons.push_back({spec.parties[o], lp, order[next++], false});
    }
    auto party_of = [&](const PlantedNeuron& n) {
        return static_cast<std::size_t>(std::find(spec.parties.begin(), spec.parties.end(), n.party) -
                                        spec.parties.begin());
    };
    for (const auto& n : out.neurons) {
        const double sign = n.aligned ? 1.0 : -1.0;
        for (std::size_t c = 0; c < d; ++c) {
            w.layers[lp].mlp_key(n.neuron, c) = 0.0f;
            w.layers[lp].mlp_value(c, n.neuron) = static_cast<float>(sign * st.value_scale * dir.party[party_of(n)][c]);
        }
    }
    for (const int t : out.party_tokens)
        for (std::size_t c = 0; c < d; ++c) w.unembed(t, c) = 0.0f;

    // Calibration runs on a fixed persona sample with the first template.
    const auto sample = sample_personas(country, uniform_marginals(country), 96, spec.seed ^ 0x5eedULL);
    std::vector<std::vector<int>> prompts;
    for (const auto& p : sample) prompts.push_back(tok.encode(render_prompt(country, p, country.templates[0])));
    for (const auto& ids : prompts)
        if (ids.size() > cfg.max_seq_len) throw InputError("plant spec: a template exceeds max_seq_len");

    // Keys: offset along the bias direction and spread along the affinity direction.
    {
        Model probe_model(cfg, w);
        std::vector<std::vector<double>> aff(P);
        double bias_proj = 0.0;
        for (const auto& ids : prompts) {
            auto tr = forward(probe_model, ids);
            auto x = tr.mlp_in[lp].row(tr.seq_len() - 1);
            bias_proj += project(x, dir.bias);
            for (std::size_t o = 0; o < P; ++o) aff[o].push_back(project(x, dir.affinity[o]));
        }
        bias_proj /= static_cast<double>(prompts.size());
        double spread = 0.0;
        for (const auto& v : aff) {
            const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - m) * (x - m);
            spread += std::sqrt(var / static_cast<double>(v.size()));
        }
        spread /= static_cast<double>(P);
        if (!(spread > 0.0) || !(bias_proj > 0.0)) throw std::runtime_error("plant_model: degenerate calibration");
        out.key_scale = st.key_spread / spread;
        const double bias_coef = st.key_bias / bias_proj;
        for (const auto& n : out.neurons) {
            const double sign = n.aligned ? 1.0 : -1.0;
            for (std::size_t c = 0; c < d; ++c)
                w.layers[lp].mlp_key(n.neuron, c) =
                    static_cast<float>(sign * out.key_scale * dir.affinity[party_of(n)][c] + bias_coef * dir.bias[c]);
        }
    }

    // Output head: fit the party-row scale so restricted logits track the
    // generator's log-odds.
    {
        Model probe_model(cfg, w);
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t s = 0; s < sample.size(); ++s) {
            auto tr = forward(probe_model, prompts[s]);
            const auto& fin = tr.residuals.back();
            Vec normed(d);
            auto row = fin.row(tr.seq_len() - 1);
            double ss = 0.0;
            for (float v : row) ss += static_cast<double>(v) * v;
            const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + 1e-5);
            for (std::size_t c = 0; c < d; ++c) normed[c] = static_cast<float>(row[c] * inv * w.final_norm[c]);
            std::vector<double> y(P), eta(P, 0.0);
            for (std::size_t o = 0; o < P; ++o) y[o] = project(normed, dir.party[o]);
            for (std::size_t k = 0; k < spec.attributes.size(); ++k) {
                const auto beta = centered(spec.attributes[k].log_odds[sample[s].categories[k]]);
                for (std::size_t o = 0; o < P; ++o) eta[o] += beta[o];
            }
            const double ym = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(P);
            for (std::size_t o = 0; o < P; ++o) {
                sxy += (y[o] - ym) * eta[o];
                sxx += (y[o] - ym) * (y[o] - ym);
            }
        }
        if (!(sxx > 0.0) || !(sxy > 0.0)) throw std::runtime_error("plant_model: output head calibration failed");
        out.output_scale = sxy / sxx;
        for (std::size_t o = 0; o < P; ++o)
            for (std::size_t c = 0; c < d; ++c)
                w.unembed(out.party_tokens[o], c) = static_cast<float>(out.output_scale * dir.party[o][c]);
    }

    Model clean(cfg, std::move(w));
    out.model = spec.gamma == 0.0 ? std::move(clean)
                                  : corrupt_output_head(clean, out.party_tokens, spec.gamma, spec.seed ^ 0xc0ffeeULL);
    return out;
}

Model corrupt_output_head(const Model& model, const std::vector<int>& party_tokens, double gamma, std::uint64_t seed) {
    if (gamma < 0.0 || !std::isfinite(gamma)) throw InputError("corrupt_output_head: gamma must be >= 0");
    if (gamma == 0.0) return model;
    ModelWeights w = model.weights();
    const std::size_t d = model.config().model_dim;
    Rng rng(seed);
    const Vec r = random_unit(rng, d);
    const double keep = 1.0 - std::min(gamma, 1.0);
    for (int t : party_tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= model.config().vocab_size)
            throw InputError("corrupt_output_head: party token out of range");
        for (std::size_t c = 0; c < d; ++c)
            w.unembed(static_cast<std::size_t>(t), c) =
                static_cast<float>(keep * w.unembed(static_cast<std::size_t>(t), c) + gamma * r[c]);
    }
    return Model(model.config(), std::move(w));
}

std::vector<double> generator_conditional(const PlantSpec& spec, const Persona& persona) {
    const std::size_t P = spec.parties.size();
    std::vector<double> eta(P, 0.0);
    for (std::size_t k = 0; k < spec.attributes.size(); ++k)
        for (std::size_t o = 0; o < P; ++o) eta[o] += spec.attributes[k].log_odds.at(persona.categories.at(k))[o];
    const double mx = *std::max_element(eta.begin(), eta.end());
    double s = 0.0;
    for (double& v : eta) s += (v = std::exp(v - mx));
    for (double& v : eta) v /= s;
    return eta;
}

SyntheticSurvey generate_synthetic_survey(const PlantSpec& spec, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw InputError("generate_synthetic_survey: n must be >= 1");
    const CountryConfig country = synth_country(spec);
    SyntheticSurvey s;
    s.respondents = sample_personas(country, uniform_marginals(country), n, seed);
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (const auto& p : s.respondents) {
        auto probs = generator_conditional(spec, p);
        std::vector<double> cum(probs.size());
        std::partial_sum(probs.begin(), probs.end(), cum.begin());
        s.party.push_back(rng.categorical(cum));
    }
    return s;
}

std::string survey_to_csv(const SyntheticSurvey& survey, const CountryConfig& country) {
    std::vector<std::string> header;
    for (const auto& a : country.attributes) header.push_back(a.name);
    header.insert(header.end(), {"party", "weight"});
    std::string out = csv_line(header);
    for (std::size_t r = 0; r < survey.respondents.size(); ++r) {
        std::vector<std::string> f;
        for (std::size_t a = 0; a < country.attributes.size(); ++a)
            f.push_back(country.attributes[a].categories[survey.respondents[r].categories[a]].name);
        f.push_back(country.parties[survey.party[r]].name);
        f.push_back("1");
        out += csv_line(f);
    }
    return out;
}

std::vector<DistributionTable> truth_tables(const PlantSpec& spec) {
    const CountryConfig country = synth_country(spec);
    const auto all = enumerate_personas(country, uniform_marginals(country));
    const std::size_t P = spec.parties.size();
    std::vector<DistributionTable> out;
    for (std::size_t k = 0; k < spec.attributes.size(); ++k) {
        DistributionTable t;
        t.source = Source::truth;
        t.attribute = spec.attributes[k].name;
        t.parties = spec.parties;
        t.categories = spec.attributes[k].categories;
        t.rows.assign(P, std::vector<double>(t.categories.size(), 0.0));
        t.num_personas = all.size();
        out.push_back(std::move(t));
    }
    for (const auto& p : all) {
        const auto probs = generator_conditional(spec, p);
        for (std::size_t k = 0; k < out.size(); ++k)
            for (std::size_t o = 0; o < P; ++o) out[k].rows[o][p.categories[k]] += p.weight * probs[o];
    }
    for (auto& t : out)
        for (auto& row : t.rows) {
            const double s = std::accumulate(row.begin(), row.end(), 0.0);
            for (double& v : row) v /= s;
        }
    return out;
}

ProbeCorpus synth_probe_corpus(const PlantSpec& spec) {
    spec.validate();
    Rng rng(spec.seed ^ 0xc0de5ULL);
    const std::size_t P = spec.parties.size();
    ProbeCorpus c;
    c.parties = spec.parties;
    std::vector<std::size_t> seen(P, 0);
    for (std::size_t i = 0; i < spec.statements; ++i) {
        const std::size_t o = i % P;
        const auto topics = topic_words(o, P);
        std::vector<std::string> words;
        const std::size_t nt = 2 + rng.bits() % 2, nf = 3 + rng.bits() % 3;
        for (std::size_t t = 0; t < nt; ++t) words.push_back(topics[rng.bits() % topics.size()]);
        for (std::size_t f = 0; f < nf; ++f) words.push_back(kFiller[rng.bits() % kFiller.size()]);
        for (std::size_t k = words.size(); k-- > 1;) std::swap(words[k], words[rng.bits() % (k + 1)]);
        std::string text;
        for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
        const Split split = (++seen[o] % spec.holdout_every == 0) ? Split::holdout : Split::train;
        c.records.push_back({text, spec.parties[o], split});
    }
    c.validate();
    return c;
}

}  // namespace mf

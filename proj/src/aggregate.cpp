#include "mf/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "json.hpp"

namespace mf {

using json = nlohmann::json;

std::string to_string(Source s) {
    switch (s) {
        case Source::latent: return "latent";
        case Source::prob: return "prob";
        case Source::survey: return "survey";
        case Source::truth: return "truth";
    }
    return "?";
}

namespace {

Source source_from_string(const std::string& s) {
    if (s == "latent") return Source::latent;
    if (s == "prob") return Source::prob;
    if (s == "survey") return Source::survey;
    if (s == "truth") return Source::truth;
    throw InputError("unknown distribution source '" + s + "'");
}

std::vector<int> encode_prompt(const Tokenizer& tokenizer, const Model& model, const std::string& prompt,
                               std::size_t persona, int tmpl) {
    auto ids = tokenizer.encode(prompt);
    if (ids.empty()) throw InputError("persona " + std::to_string(persona) + ": empty prompt");
    if (ids.size() > model.config().max_seq_len)
        throw InputError("persona " + std::to_string(persona) + ", template " + std::to_string(tmpl) + ": prompt has " +
                         std::to_string(ids.size()) + " tokens, max_seq_len is " +
                         std::to_string(model.config().max_seq_len));
    return ids;
}

// Normalizes a nonnegative vector; an all-zero vector becomes uniform.
void normalize_row(std::vector<double>& row) {
    double s = 0.0;
    for (double v : row) s += v;
    if (s <= 0.0 || !std::isfinite(s)) {
        std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(row.size()));
        return;
    }
    for (double& v : row) v /= s;
}

// Weighted mean of per-column values within each category of `attribute`.
// Empty cells are reported through `present`.
std::vector<double> category_means(const std::vector<double>& values, const std::vector<Persona>& personas,
                                   std::size_t templates, std::size_t attribute, std::size_t categories,
                                   std::vector<bool>& present) {
    std::vector<double> sum(categories, 0.0), weight(categories, 0.0);
    for (std::size_t p = 0; p < personas.size(); ++p) {
        const std::size_t g = personas[p].categories.at(attribute);
        for (std::size_t j = 0; j < templates; ++j) {
            sum[g] += personas[p].weight * values[p * templates + j];
            weight[g] += personas[p].weight;
        }
    }
    present.assign(categories, false);
    for (std::size_t g = 0; g < categories; ++g) {
        if (weight[g] > 0.0) {
            present[g] = true;
            sum[g] /= weight[g];
        }
    }
    return sum;
}

void check_scores(const ScoreTable& t, const std::vector<Persona>& personas, const CountryConfig& config,
                  std::size_t attribute) {
    if (attribute >= config.attributes.size()) throw InputError("attribute index out of range");
    if (t.num_personas != personas.size())
        throw InputError("score table covers " + std::to_string(t.num_personas) + " personas, got " +
                         std::to_string(personas.size()));
    for (const auto& row : t.values)
        if (row.size() != t.num_personas * t.num_templates) throw InputError("score table is incomplete");
}

}  // namespace

const std::vector<double>& DistributionTable::row(const std::string& party) const {
    for (std::size_t i = 0; i < parties.size(); ++i)
        if (parties[i] == party) return rows[i];
    throw InputError("distribution for '" + attribute + "' has no party '" + party + "'");
}

std::vector<double> restricted_distribution(std::span<const float> logits, const std::vector<int>& tokens) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int t : tokens) mx = std::max(mx, static_cast<double>(logits[static_cast<std::size_t>(t)]));
    std::vector<double> out;
    out.reserve(tokens.size());
    double s = 0.0;
    for (int t : tokens) {
        out.push_back(std::exp(static_cast<double>(logits[static_cast<std::size_t>(t)]) - mx));
        s += out.back();
    }
    for (double& v : out) v /= s;
    return out;
}

ActivationStore record_activations(const Model& model, const Tokenizer& tokenizer,
                                   const std::vector<ValueVectorSelection>& selections, const CountryConfig& config,
                                   const std::vector<Persona>& personas, const RecordOptions& options) {
    if (personas.empty()) throw InputError("record_activations: persona list is empty");
    if (config.templates.empty()) throw InputError("record_activations: no templates");

    ActivationStore store;
    store.parties = config.party_names();
    store.party_tokens = party_token_ids(config, tokenizer);
    store.num_personas = personas.size();
    store.num_templates = config.templates.size();
    bool any = false;
    for (const auto& sel : selections) {
        auto it = std::find(store.parties.begin(), store.parties.end(), sel.party);
        if (it == store.parties.end()) throw InputError("selection for unknown party '" + sel.party + "'");
        const std::size_t pi = static_cast<std::size_t>(it - store.parties.begin());
        if (sel.party_token != store.party_tokens[pi])
            throw InputError("selection for '" + sel.party + "' uses token " + std::to_string(sel.party_token) +
                             ", config maps it to " + std::to_string(store.party_tokens[pi]));
        for (const auto& r : sel.retained()) {
            if (r.layer >= model.config().num_layers || r.neuron >= model.config().mlp_dim)
                throw InputError("selection for '" + sel.party + "' references a vector outside the model");
            store.keys.push_back({pi, r.layer, r.neuron, r.cosine});
            any = true;
        }
    }
    if (!any) throw InputError("record_activations: selection is empty");

    const std::size_t cols = store.columns();
    store.raw.assign(store.keys.size(), std::vector<double>(cols, 0.0));
    store.party_probs.assign(store.parties.size(), std::vector<double>(cols, 0.0));

    // Each column is written by exactly one task, so no locking is needed.
    parallel_for(cols, options.workers, [&](std::size_t c) {
        const std::size_t p = c / store.num_templates, j = c % store.num_templates;
        const auto& tmpl = config.templates[j];
        auto ids = encode_prompt(tokenizer, model, render_prompt(config, personas[p], tmpl), p, tmpl.id);
        ForwardTrace trace = forward(model, ids);
        const std::size_t last = trace.seq_len() - 1;
        for (std::size_t k = 0; k < store.keys.size(); ++k) {
            const Matrix& m = trace.mlp_coeffs[store.keys[k].layer];
            double v = 0.0;
            if (options.readoff == Readoff::final_position) {
                v = m(last, store.keys[k].neuron);
            } else {
                for (std::size_t t = 0; t <= last; ++t) v += m(t, store.keys[k].neuron);
                v /= static_cast<double>(last + 1);
            }
            store.raw[k][c] = v;
        }
        auto probs = restricted_distribution(trace.final_logits, store.party_tokens);
        for (std::size_t o = 0; o < probs.size(); ++o) store.party_probs[o][c] = probs[o];
    });
    return store;
}

void normalize_and_weight(ActivationStore& store) {
    const std::size_t cols = store.columns();
    if (cols == 0) throw InputError("normalize_and_weight: empty store");
    store.mean.assign(store.keys.size(), 0.0);
    store.sd.assign(store.keys.size(), 0.0);
    store.weighted.assign(store.keys.size(), std::vector<double>(cols, 0.0));
    for (std::size_t k = 0; k < store.keys.size(); ++k) {
        const auto& m = store.raw[k];
        if (m.size() != cols) throw InputError("normalize_and_weight: store incomplete for key " + std::to_string(k));
        double mean = 0.0;
        for (double v : m) mean += v;
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (double v : m) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / static_cast<double>(cols));
        store.mean[k] = mean;
        store.sd[k] = sd;
        if (sd == 0.0) continue;
        for (std::size_t c = 0; c < cols; ++c) store.weighted[k][c] = (m[c] - mean) / sd * store.keys[k].cosine;
    }
}

ScoreTable party_scores(const ActivationStore& store) {
    if (!store.normalized()) throw InputError("party_scores: store has not been normalized");
    const std::size_t cols = store.columns();
    std::vector<std::vector<double>> sums(store.parties.size(), std::vector<double>(cols, 0.0));
    std::vector<std::size_t> count(store.parties.size(), 0);
    for (std::size_t k = 0; k < store.keys.size(); ++k) {
        const std::size_t o = store.keys[k].party;
        ++count[o];
        for (std::size_t c = 0; c < cols; ++c) sums[o][c] += store.weighted[k][c];
    }
    ScoreTable t;
    t.num_personas = store.num_personas;
    t.num_templates = store.num_templates;
    for (std::size_t o = 0; o < store.parties.size(); ++o) {
        if (count[o] == 0) {
            log(LogLevel::error, "party_scores: party '" + store.parties[o] + "' has no retained vectors; score undefined");
            t.undefined.push_back(store.parties[o]);
            continue;
        }
        for (double& v : sums[o]) {
            v /= static_cast<double>(count[o]);
            if (!std::isfinite(v)) throw std::runtime_error("party_scores: non-finite score for '" + store.parties[o] + "'");
        }
        t.parties.push_back(store.parties[o]);
        t.values.push_back(std::move(sums[o]));
    }
    if (t.parties.empty()) throw InputError("party_scores: no party has retained vectors");
    return t;
}

ScoreTable party_probabilities(const ActivationStore& store) {
    ScoreTable t;
    t.parties = store.parties;
    t.num_personas = store.num_personas;
    t.num_templates = store.num_templates;
    t.values = store.party_probs;
    return t;
}

DistributionTable latent_distribution(const ScoreTable& scores, const std::vector<Persona>& personas,
                                      const CountryConfig& config, std::size_t attribute,
                                      const LatentOptions& options) {
    check_scores(scores, personas, config, attribute);
    const auto& schema = config.attributes[attribute];
    const std::size_t G = schema.categories.size();
    DistributionTable d;
    d.source = Source::latent;
    d.attribute = schema.name;
    d.parties = scores.parties;
    for (const auto& c : schema.categories) d.categories.push_back(c.name);
    d.num_personas = scores.num_personas;
    d.num_templates = scores.num_templates;

    for (std::size_t o = 0; o < scores.parties.size(); ++o) {
        std::vector<bool> present;
        std::vector<double> row =
            category_means(scores.values[o], personas, scores.num_templates, attribute, G, present);
        for (std::size_t g = 0; g < G; ++g)
            if (!present[g])
                log_warn("latent_distribution: no persona in category '" + schema.categories[g].name + "' of '" +
                         schema.name + "'; it receives the floor value");

        if (options.norm == LatentNorm::softmax) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t g = 0; g < G; ++g)
                if (present[g]) mx = std::max(mx, row[g]);
            for (std::size_t g = 0; g < G; ++g) row[g] = present[g] ? std::exp(row[g] - mx) : 0.0;
            normalize_row(row);
            d.rows.push_back(std::move(row));
            continue;
        }

        double floor = std::numeric_limits<double>::infinity();
        if (options.floor == FloorRule::category_min) {
            for (std::size_t g = 0; g < G; ++g)
                if (present[g]) floor = std::min(floor, row[g]);
        } else {
            for (double v : scores.values[o]) floor = std::min(floor, v);
        }
        for (std::size_t g = 0; g < G; ++g) row[g] = present[g] ? std::max(0.0, row[g] - floor) : 0.0;
        normalize_row(row);
        d.rows.push_back(std::move(row));
    }
    return d;
}

DistributionTable probability_distribution(const ScoreTable& probs, const std::vector<Persona>& personas,
                                           const CountryConfig& config, std::size_t attribute) {
    check_scores(probs, personas, config, attribute);
    const auto& schema = config.attributes[attribute];
    const std::size_t G = schema.categories.size();
    DistributionTable d;
    d.source = Source::prob;
    d.attribute = schema.name;
    d.parties = probs.parties;
    for (const auto& c : schema.categories) d.categories.push_back(c.name);
    d.num_personas = probs.num_personas;
    d.num_templates = probs.num_templates;
    for (std::size_t o = 0; o < probs.parties.size(); ++o) {
        std::vector<bool> present;
        auto row = category_means(probs.values[o], personas, probs.num_templates, attribute, G, present);
        normalize_row(row);
        d.rows.push_back(std::move(row));
    }
    return d;
}

DistributionTable probability_distribution(const Model& model, const Tokenizer& tokenizer,
                                           const std::vector<Persona>& personas, const CountryConfig& config,
                                           const std::vector<int>& party_tokens, std::size_t attribute, int workers) {
    if (party_tokens.size() != config.parties.size()) throw InputError("party token map does not match the party set");
    for (std::size_t i = 0; i < party_tokens.size(); ++i)
        for (std::size_t j = i + 1; j < party_tokens.size(); ++j)
            if (party_tokens[i] == party_tokens[j])
                throw InputError("parties '" + config.parties[i].name + "' and '" + config.parties[j].name +
                                 "' share token id " + std::to_string(party_tokens[i]));
    ScoreTable t;
    t.parties = config.party_names();
    t.num_personas = personas.size();
    t.num_templates = config.templates.size();
    const std::size_t cols = t.num_personas * t.num_templates;
    t.values.assign(t.parties.size(), std::vector<double>(cols, 0.0));
    parallel_for(cols, workers, [&](std::size_t c) {
        const std::size_t p = c / t.num_templates, j = c % t.num_templates;
        auto ids = encode_prompt(tokenizer, model, render_prompt(config, personas[p], config.templates[j]), p,
                                 config.templates[j].id);
        auto probs = restricted_distribution(forward(model, ids).final_logits, party_tokens);
        for (std::size_t o = 0; o < probs.size(); ++o) t.values[o][c] = probs[o];
    });
    return probability_distribution(t, personas, config, attribute);
}

DistributionTable survey_distribution(const CsvTable& survey, const CountryConfig& config, std::size_t attribute) {
    if (attribute >= config.attributes.size()) throw InputError("attribute index out of range");
    const auto& schema = config.attributes[attribute];
    const int ca = survey.column(schema.name), cp = survey.column("party"), cw = survey.column("weight");
    if (ca < 0) throw InputError("survey: missing column '" + schema.name + "'");
    if (cp < 0 || cw < 0) throw InputError("survey: expected 'party' and 'weight' columns");
    DistributionTable d;
    d.source = Source::survey;
    d.attribute = schema.name;
    d.parties = config.party_names();
    for (const auto& c : schema.categories) d.categories.push_back(c.name);
    d.rows.assign(d.parties.size(), std::vector<double>(d.categories.size(), 0.0));
    std::size_t skipped = 0;
    for (std::size_t r = 0; r < survey.rows.size(); ++r) {
        const auto& row = survey.rows[r];
        auto it = std::find(d.parties.begin(), d.parties.end(), row[cp]);
        if (it == d.parties.end()) {
            ++skipped;
            continue;
        }
        auto g = schema.index_of(row[ca]);
        if (!g) throw InputError("survey row " + std::to_string(r + 1) + ": unknown category '" + row[ca] + "' for '" +
                                 schema.name + "'");
        double w = 0.0;
        try {
            w = std::stod(row[cw]);
        } catch (const std::exception&) {
            throw InputError("survey row " + std::to_string(r + 1) + ": bad weight '" + row[cw] + "'");
        }
        if (!(w > 0.0) || !std::isfinite(w))
            throw InputError("survey row " + std::to_string(r + 1) + ": weight must be positive");
        d.rows[static_cast<std::size_t>(it - d.parties.begin())][*g] += w;
    }
    if (skipped > 0) log_info("survey: " + std::to_string(skipped) + " rows with parties outside the party set ignored");
    for (std::size_t o = 0; o < d.parties.size(); ++o) {
        double s = 0.0;
        for (double v : d.rows[o]) s += v;
        if (s <= 0.0) throw InputError("survey: party '" + d.parties[o] + "' has zero total weight");
        for (double& v : d.rows[o]) v /= s;
    }
    d.num_personas = survey.rows.size() - skipped;
    return d;
}

DistributionTable survey_distribution(const std::filesystem::path& path, const CountryConfig& config,
                                      std::size_t attribute) {
    try {
        return survey_distribution(read_csv(path), config, attribute);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

std::string distributions_to_csv(const std::vector<DistributionTable>& tables) {
    std::string out = "source,attribute,party,category,value\n";
    for (const auto& t : tables)
        for (std::size_t o = 0; o < t.parties.size(); ++o)
            for (std::size_t g = 0; g < t.categories.size(); ++g)
                out += csv_line({to_string(t.source), t.attribute, t.parties[o], t.categories[g],
                                 format_double(t.rows[o][g])});
    return out;
}

std::vector<DistributionTable> distributions_from_csv(const std::string& text) {
    CsvTable csv = parse_csv(text);
    const int cs = csv.column("source"), ca = csv.column("attribute"), cp = csv.column("party"),
              cc = csv.column("category"), cv = csv.column("value");
    if (cs < 0 || ca < 0 || cp < 0 || cc < 0 || cv < 0)
        throw InputError("distribution CSV: expected header source,attribute,party,category,value");
    std::vector<DistributionTable> out;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    for (const auto& row : csv.rows) {
        auto key = std::make_pair(row[cs], row[ca]);
        auto it = index.find(key);
        if (it == index.end()) {
            DistributionTable t;
            t.source = source_from_string(row[cs]);
            t.attribute = row[ca];
            it = index.emplace(key, out.size()).first;
            out.push_back(std::move(t));
        }
        auto& t = out[it->second];
        auto pit = std::find(t.parties.begin(), t.parties.end(), row[cp]);
        if (pit == t.parties.end()) {
            t.parties.push_back(row[cp]);
            t.rows.emplace_back(t.categories.size(), 0.0);
            pit = t.parties.end() - 1;
        }
        auto cit = std::find(t.categories.begin(), t.categories.end(), row[cc]);
        if (cit == t.categories.end()) {
            t.categories.push_back(row[cc]);
            for (auto& r : t.rows) r.push_back(0.0);
            cit = t.categories.end() - 1;
        }
        t.rows[static_cast<std::size_t>(pit - t.parties.begin())][static_cast<std::size_t>(cit - t.categories.begin())] =
            std::stod(row[cv]);
    }
    return out;
}

namespace {

NamedTensor pack(const std::string& name, const std::vector<std::vector<double>>& m, std::size_t cols) {
    NamedTensor t{name, {m.size(), cols}, {}};
    t.values.reserve(m.size() * cols);
    for (const auto& r : m)
        for (double v : r) t.values.push_back(static_cast<float>(v));
    return t;
}

std::vector<std::vector<double>> unpack(const NamedTensor& t) {
    std::vector<std::vector<double>> m(t.shape.at(0), std::vector<double>(t.shape.at(1)));
    for (std::size_t r = 0; r < m.size(); ++r)
        for (std::size_t c = 0; c < m[r].size(); ++c) m[r][c] = t.values[r * t.shape[1] + c];
    return m;
}

}  // namespace

void save_activation_store(const ActivationStore& store, const std::filesystem::path& path,
                           const std::string& meta_json) {
    const std::size_t cols = store.columns();
    std::vector<NamedTensor> tensors{pack("raw", store.raw, cols), pack("party_probs", store.party_probs, cols)};
    if (store.normalized()) {
        tensors.push_back(pack("weighted", store.weighted, cols));
        tensors.push_back(pack("mean", {store.mean}, store.mean.size()));
        tensors.push_back(pack("sd", {store.sd}, store.sd.size()));
    }
    write_container(path, tensors, meta_json);

    json idx;
    idx["parties"] = store.parties;
    idx["party_tokens"] = store.party_tokens;
    idx["num_personas"] = store.num_personas;
    idx["num_templates"] = store.num_templates;
    idx["column_order"] = "persona * num_templates + template";
    idx["keys"] = json::array();
    for (const auto& k : store.keys)
        idx["keys"].push_back(
            {{"party", store.parties[k.party]}, {"layer", k.layer}, {"neuron", k.neuron}, {"cosine", k.cosine}});
    idx["meta"] = json::parse(meta_json);
    write_file(path.string() + ".json", idx.dump(2) + "\n");
}

ActivationStore load_activation_store(const std::filesystem::path& path) {
    Container c = read_container(path);
    ActivationStore s;
    try {
        json idx = json::parse(read_file(path.string() + ".json"));
        s.parties = idx.at("parties").get<std::vector<std::string>>();
        s.party_tokens = idx.at("party_tokens").get<std::vector<int>>();
        s.num_personas = idx.at("num_personas").get<std::size_t>();
        s.num_templates = idx.at("num_templates").get<std::size_t>();
        for (const auto& k : idx.at("keys")) {
            auto it = std::find(s.parties.begin(), s.parties.end(), k.at("party").get<std::string>());
            if (it == s.parties.end()) throw InputError("activation index: unknown party");
            s.keys.push_back({static_cast<std::size_t>(it - s.parties.begin()), k.at("layer").get<std::size_t>(),
                              k.at("neuron").get<std::size_t>(), k.at("cosine").get<double>()});
        }
    } catch (const json::exception& e) {
        throw InputError(path.string() + ".json: " + e.what());
    }
    auto need = [&](const std::string& name) -> const NamedTensor& {
        auto it = c.tensors.find(name);
        if (it == c.tensors.end()) throw InputError(path.string() + ": missing tensor '" + name + "'");
        return it->second;
    };
    s.raw = unpack(need("raw"));
    s.party_probs = unpack(need("party_probs"));
    if (c.tensors.count("weighted")) {
        s.weighted = unpack(need("weighted"));
        s.mean = unpack(need("mean")).at(0);
        s.sd = unpack(need("sd")).at(0);
    }
    if (s.raw.size() != s.keys.size()) throw InputError(path.string() + ": key count does not match index");
    return s;
}

}  // namespace mf

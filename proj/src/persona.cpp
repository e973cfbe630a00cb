#include "mf/persona.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "mf/util.hpp"

namespace mf {

using json = nlohmann::json;

namespace {

// Placeholder names in order of appearance; throws on an unbalanced brace.
std::vector<std::string> placeholders(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while ((i = text.find('{', i)) != std::string::npos) {
        auto j = text.find('}', i);
        if (j == std::string::npos) throw InputError("template has an unterminated placeholder");
        out.push_back(text.substr(i + 1, j - i - 1));
        i = j + 1;
    }
    return out;
}

}  // namespace

std::optional<std::size_t> AttributeSchema::index_of(const std::string& category) const {
    for (std::size_t i = 0; i < categories.size(); ++i)
        if (categories[i].name == category) return i;
    return std::nullopt;
}

const std::string& AttributeSchema::surface(std::size_t category, const std::string& language) const {
    const auto& c = categories.at(category);
    auto it = c.surface.find(language);
    return it != c.surface.end() ? it->second : c.name;
}

std::size_t CountryConfig::attribute_index(const std::string& name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i].name == name) return i;
    throw InputError("unknown attribute '" + name + "'");
}

std::vector<std::string> CountryConfig::party_names() const {
    std::vector<std::string> out;
    for (const auto& p : parties) out.push_back(p.name);
    return out;
}

CountryConfig parse_country_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw InputError(std::string("country config: ") + e.what());
    }
    CountryConfig c;
    try {
        c.country = j.value("country", "");
        c.language = j.value("language", "en");
        if (j.contains("year_of_election")) {
            const auto& y = j["year_of_election"];
            c.year_of_election = y.is_string() ? y.get<std::string>() : std::to_string(y.get<long>());
        }
        for (const auto& a : j.at("attributes")) {
            AttributeSchema s;
            s.name = a.at("name").get<std::string>();
            const std::string scale = a.at("scale").get<std::string>();
            if (scale == "nominal")
                s.scale = Scale::nominal;
            else if (scale == "ordinal")
                s.scale = Scale::ordinal;
            else
                throw InputError("attribute '" + s.name + "': unknown scale '" + scale + "'");
            for (const auto& cat : a.at("categories")) {
                Category k;
                if (cat.is_string()) {
                    k.name = cat.get<std::string>();
                } else {
                    k.name = cat.at("name").get<std::string>();
                    if (cat.contains("surface"))
                        for (auto it = cat["surface"].begin(); it != cat["surface"].end(); ++it)
                            k.surface[it.key()] = it.value().get<std::string>();
                }
                s.categories.push_back(std::move(k));
            }
            c.attributes.push_back(std::move(s));
        }
        for (const auto& p : j.at("parties")) {
            PartySpec ps;
            ps.name = p.at("name").get<std::string>();
            ps.canonical_token_string = p.value("canonical_token_string", ps.name);
            if (p.contains("token")) ps.token_override = p["token"].get<std::string>();
            c.parties.push_back(std::move(ps));
        }
        for (const auto& t : j.at("templates")) c.templates.push_back({t.at("id").get<int>(), t.at("text").get<std::string>()});
    } catch (const json::exception& e) {
        throw InputError(std::string("country config: ") + e.what());
    }

    if (c.parties.empty()) throw InputError("country config: empty party set");
    if (c.templates.empty()) throw InputError("country config: at least one template is required");
    std::set<std::string> attr_names;
    for (const auto& a : c.attributes) {
        if (!attr_names.insert(a.name).second) throw InputError("country config: duplicate attribute '" + a.name + "'");
        std::set<std::string> cats;
        for (const auto& k : a.categories)
            if (!cats.insert(k.name).second)
                throw InputError("attribute '" + a.name + "': duplicate category '" + k.name + "'");
        if (a.categories.empty()) throw InputError("attribute '" + a.name + "' has no categories");
        if (a.scale == Scale::ordinal && a.categories.size() < 2)
            throw InputError("ordinal attribute '" + a.name + "' needs at least 2 categories");
    }
    std::set<std::string> party_names;
    for (const auto& p : c.parties)
        if (!party_names.insert(p.name).second) throw InputError("country config: duplicate party '" + p.name + "'");
    for (const auto& t : c.templates) {
        std::set<std::string> found;
        for (const auto& ph : placeholders(t.text)) {
            if (ph == "year_of_election" && c.year_of_election && !attr_names.count(ph)) {
                found.insert(ph);
                continue;
            }
            if (!attr_names.count(ph))
                throw InputError("template " + std::to_string(t.id) + ": unknown placeholder {" + ph + "}");
            found.insert(ph);
        }
        for (const auto& a : attr_names)
            if (!found.count(a))
                throw InputError("template " + std::to_string(t.id) + ": missing placeholder {" + a + "}");
    }
    if (j.contains("marginals")) {
        Marginals m;
        for (const auto& a : c.attributes) m.emplace_back(a.categories.size(), 0.0);
        for (auto it = j["marginals"].begin(); it != j["marginals"].end(); ++it) {
            const std::size_t ai = c.attribute_index(it.key());
            for (auto ct = it.value().begin(); ct != it.value().end(); ++ct) {
                auto ci = c.attributes[ai].index_of(ct.key());
                if (!ci) throw InputError("marginals: unknown category '" + ct.key() + "' for attribute '" + it.key() + "'");
                m[ai][*ci] = ct.value().get<double>();
            }
        }
        for (std::size_t a = 0; a < m.size(); ++a) {
            double s = 0.0;
            for (double v : m[a]) {
                if (v < 0.0 || !std::isfinite(v)) throw InputError("marginals: invalid weight");
                s += v;
            }
            if (s <= 0.0) throw InputError("marginals: attribute '" + c.attributes[a].name + "' has zero mass");
            for (double& v : m[a]) v /= s;
        }
        c.marginals = std::move(m);
    }
    return c;
}

CountryConfig load_country_config(const std::filesystem::path& path) {
    try {
        return parse_country_config(read_file(path));
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

std::string country_config_to_json(const CountryConfig& c) {
    json j;
    j["country"] = c.country;
    j["language"] = c.language;
    if (c.year_of_election) j["year_of_election"] = *c.year_of_election;
    j["attributes"] = json::array();
    for (const auto& a : c.attributes) {
        json cats = json::array();
        for (const auto& k : a.categories) {
            if (k.surface.empty()) {
                cats.push_back(k.name);
            } else {
                json s = json::object();
                for (const auto& [lang, txt] : k.surface) s[lang] = txt;
                cats.push_back({{"name", k.name}, {"surface", s}});
            }
        }
        j["attributes"].push_back(
            {{"name", a.name}, {"scale", a.scale == Scale::nominal ? "nominal" : "ordinal"}, {"categories", cats}});
    }
    j["parties"] = json::array();
    for (const auto& p : c.parties) {
        json pj = {{"name", p.name}, {"canonical_token_string", p.canonical_token_string}};
        if (p.token_override) pj["token"] = *p.token_override;
        j["parties"].push_back(pj);
    }
    j["templates"] = json::array();
    for (const auto& t : c.templates) j["templates"].push_back({{"id", t.id}, {"text", t.text}});
    if (c.marginals) {
        json m = json::object();
        for (std::size_t a = 0; a < c.attributes.size(); ++a)
            for (std::size_t k = 0; k < c.attributes[a].categories.size(); ++k)
                m[c.attributes[a].name][c.attributes[a].categories[k].name] = (*c.marginals)[a][k];
        j["marginals"] = m;
    }
    return j.dump(2) + "\n";
}

CountryConfig with_templates(CountryConfig config, std::size_t j) {
    if (j == 0 || j > config.templates.size())
        throw InputError("requested " + std::to_string(j) + " templates, config has " +
                         std::to_string(config.templates.size()));
    config.templates.resize(j);
    return config;
}

std::string render_prompt(const CountryConfig& config, const Persona& persona, const PromptTemplate& tmpl) {
    if (persona.categories.size() != config.attributes.size())
        throw InputError("persona " + std::to_string(persona.id) + " does not cover every attribute");
    std::string out;
    std::size_t i = 0;
    const std::string& text = tmpl.text;
    while (i < text.size()) {
        auto open = text.find('{', i);
        if (open == std::string::npos) {
            out.append(text, i, std::string::npos);
            break;
        }
        out.append(text, i, open - i);
        auto close = text.find('}', open);
        if (close == std::string::npos) throw InputError("template " + std::to_string(tmpl.id) + ": unresolved placeholder");
        const std::string name = text.substr(open + 1, close - open - 1);
        bool resolved = false;
        for (std::size_t a = 0; a < config.attributes.size(); ++a) {
            if (config.attributes[a].name == name) {
                out += config.attributes[a].surface(persona.categories[a], config.language);
                resolved = true;
                break;
            }
        }
        if (!resolved && name == "year_of_election" && config.year_of_election) {
            out += *config.year_of_election;
            resolved = true;
        }
        if (!resolved)
            throw InputError("template " + std::to_string(tmpl.id) + ": unresolved placeholder {" + name + "}");
        i = close + 1;
    }
    return out;
}

Marginals parse_marginals(const std::string& csv_text, const CountryConfig& config) {
    CsvTable t = parse_csv(csv_text);
    const int ca = t.column("attribute"), cc = t.column("category"), cw = t.column("weight");
    if (ca < 0 || cc < 0 || cw < 0) throw InputError("marginals: expected header attribute,category,weight");
    Marginals m;
    for (const auto& a : config.attributes) m.emplace_back(a.categories.size(), 0.0);
    for (const auto& row : t.rows) {
        const std::size_t ai = config.attribute_index(row[ca]);
        auto ci = config.attributes[ai].index_of(row[cc]);
        if (!ci) throw InputError("marginals: category '" + row[cc] + "' not in schema of '" + row[ca] + "'");
        double w = 0.0;
        try {
            w = std::stod(row[cw]);
        } catch (const std::exception&) {
            throw InputError("marginals: bad weight '" + row[cw] + "'");
        }
        if (w < 0.0 || !std::isfinite(w)) throw InputError("marginals: negative or non-finite weight");
        m[ai][*ci] += w;
    }
    for (std::size_t a = 0; a < m.size(); ++a) {
        double s = 0.0;
        for (double v : m[a]) s += v;
        if (s <= 0.0) throw InputError("marginals: attribute '" + config.attributes[a].name + "' has zero mass");
        for (double& v : m[a]) v /= s;
    }
    return m;
}

Marginals load_marginals(const std::filesystem::path& path, const CountryConfig& config) {
    try {
        return parse_marginals(read_file(path), config);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

Marginals uniform_marginals(const CountryConfig& config) {
    Marginals m;
    for (const auto& a : config.attributes)
        m.emplace_back(a.categories.size(), 1.0 / static_cast<double>(a.categories.size()));
    return m;
}

std::string marginals_to_csv(const Marginals& marginals, const CountryConfig& config) {
    std::string out = "attribute,category,weight\n";
    for (std::size_t a = 0; a < config.attributes.size(); ++a)
        for (std::size_t k = 0; k < config.attributes[a].categories.size(); ++k)
            out += csv_line({config.attributes[a].name, config.attributes[a].categories[k].name,
                             format_double(marginals[a][k])});
    return out;
}

namespace {

void check_marginals(const CountryConfig& config, const Marginals& marginals) {
    if (marginals.size() != config.attributes.size()) throw InputError("marginals do not cover every attribute");
    for (std::size_t a = 0; a < marginals.size(); ++a) {
        if (marginals[a].size() != config.attributes[a].categories.size())
            throw InputError("marginals for '" + config.attributes[a].name + "' do not match its categories");
        double s = 0.0;
        for (double v : marginals[a]) s += v;
        if (!(s > 0.0)) throw InputError("marginals: attribute '" + config.attributes[a].name + "' has zero mass");
    }
}

}  // namespace

std::vector<Persona> sample_personas(const CountryConfig& config, const Marginals& marginals, std::size_t n,
                                     std::uint64_t seed) {
    if (n == 0) throw InputError("sample_personas: n must be >= 1");
    check_marginals(config, marginals);
    std::vector<std::vector<double>> cumulative;
    for (const auto& m : marginals) {
        std::vector<double> c(m.size());
        double s = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) c[i] = (s += m[i]);
        cumulative.push_back(std::move(c));
    }
    Rng rng(seed);
    std::vector<Persona> out(n);
    for (std::size_t p = 0; p < n; ++p) {
        out[p].id = p;
        out[p].categories.resize(config.attributes.size());
        for (std::size_t a = 0; a < config.attributes.size(); ++a) out[p].categories[a] = rng.categorical(cumulative[a]);
    }
    return out;
}

std::vector<Persona> enumerate_personas(const CountryConfig& config, const Marginals& marginals, std::size_t cap) {
    check_marginals(config, marginals);
    std::size_t total = 1;
    for (const auto& a : config.attributes) {
        if (total > cap / a.categories.size())
            throw InputError("enumerate_personas: persona space exceeds cap of " + std::to_string(cap));
        total *= a.categories.size();
    }
    std::vector<Persona> out;
    out.reserve(total);
    std::vector<std::size_t> idx(config.attributes.size(), 0);
    for (std::size_t p = 0; p < total; ++p) {
        Persona persona;
        persona.id = p;
        persona.categories = idx;
        persona.weight = 1.0;
        for (std::size_t a = 0; a < idx.size(); ++a) persona.weight *= marginals[a][idx[a]];
        out.push_back(std::move(persona));
        for (std::size_t a = idx.size(); a-- > 0;) {
            if (++idx[a] < config.attributes[a].categories.size()) break;
            idx[a] = 0;
        }
    }
    return out;
}

std::vector<int> party_token_ids(const CountryConfig& config, const Tokenizer& tokenizer) {
    std::vector<int> ids;
    for (const auto& p : config.parties) {
        if (p.token_override) {
            auto id = tokenizer.id(*p.token_override);
            if (!id) throw InputError("party '" + p.name + "': token override '" + *p.token_override + "' not in vocabulary");
            ids.push_back(*id);
            continue;
        }
        auto enc = tokenizer.encode(p.canonical_token_string);
        if (enc.empty()) throw InputError("party '" + p.name + "': canonical token string is empty");
        ids.push_back(enc.front());
    }
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = i + 1; j < ids.size(); ++j)
            if (ids[i] == ids[j])
                throw InputError("parties '" + config.parties[i].name + "' and '" + config.parties[j].name +
                                 "' map to the same token id " + std::to_string(ids[i]));
    return ids;
}

}  // namespace mf

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mf/model.hpp"

namespace mf {

enum class Scale { nominal, ordinal };

struct Category {
    std::string name;
    std::map<std::string, std::string> surface;  // language -> surface string
};

struct AttributeSchema {
    std::string name;
    Scale scale = Scale::nominal;
    std::vector<Category> categories;

    std::optional<std::size_t> index_of(const std::string& category) const;
    const std::string& surface(std::size_t category, const std::string& language) const;
};

struct PartySpec {
    std::string name;
    std::string canonical_token_string;
    std::optional<std::string> token_override;  // exact vocabulary entry to use as t_o
};

struct PromptTemplate {
    int id = 0;
    std::string text;
};

// Per-attribute category probabilities, in schema order.
using Marginals = std::vector<std::vector<double>>;

struct CountryConfig {
    std::string country;
    std::string language = "en";
    std::optional<std::string> year_of_election;
    std::vector<AttributeSchema> attributes;
    std::vector<PartySpec> parties;
    std::vector<PromptTemplate> templates;
    std::optional<Marginals> marginals;  // optional inline marginals

    std::size_t attribute_index(const std::string& name) const;
    std::vector<std::string> party_names() const;
};

CountryConfig parse_country_config(const std::string& json_text);
CountryConfig load_country_config(const std::filesystem::path& path);
std::string country_config_to_json(const CountryConfig& config);

// Keeps the first `j` templates; throws if fewer exist.
CountryConfig with_templates(CountryConfig config, std::size_t j);

struct Persona {
    std::size_t id = 0;
    std::vector<std::size_t> categories;  // category index per attribute
    double weight = 1.0;
};

std::string render_prompt(const CountryConfig& config, const Persona& persona, const PromptTemplate& tmpl);

// Survey marginals CSV: "attribute,category,weight". Weights are normalized per attribute.
Marginals load_marginals(const std::filesystem::path& path, const CountryConfig& config);
Marginals parse_marginals(const std::string& csv_text, const CountryConfig& config);
Marginals uniform_marginals(const CountryConfig& config);
std::string marginals_to_csv(const Marginals& marginals, const CountryConfig& config);

// Independent per-attribute draws from the marginals; unit weights.
std::vector<Persona> sample_personas(const CountryConfig& config, const Marginals& marginals, std::size_t n,
                                     std::uint64_t seed);

// Full cross product, weighted by the product of marginals. Throws if the
// number of combinations exceeds `cap`.
std::vector<Persona> enumerate_personas(const CountryConfig& config, const Marginals& marginals,
                                        std::size_t cap = 1'000'000);

// t_o per party: the override entry if configured, else the first token of
// the canonical party string.
std::vector<int> party_token_ids(const CountryConfig& config, const Tokenizer& tokenizer);

}  // namespace mf

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mf/model.hpp"
#include "mf/persona.hpp"
#include "mf/select.hpp"
#include "mf/util.hpp"

namespace mf {

enum class Readoff { final_position, mean_over_positions };

struct ActivationKey {
    std::size_t party = 0;  // index into ActivationStore::parties
    std::size_t layer = 0;
    std::size_t neuron = 0;
    double cosine = 0.0;
};

// Raw coefficients m and weighted activations a for every retained vector,
// laid out as keys x (persona * num_templates + template).
struct ActivationStore {
    std::vector<std::string> parties;
    std::vector<int> party_tokens;
    std::vector<ActivationKey> keys;
    std::size_t num_personas = 0;
    std::size_t num_templates = 0;
    std::vector<std::vector<double>> raw;
    std::vector<double> mean, sd;  // per key, filled by normalize_and_weight
    std::vector<std::vector<double>> weighted;
    // Restricted next-token distribution over party tokens, party x column.
    std::vector<std::vector<double>> party_probs;

    std::size_t column(std::size_t persona, std::size_t tmpl) const { return persona * num_templates + tmpl; }
    std::size_t columns() const { return num_personas * num_templates; }
    bool normalized() const { return !weighted.empty(); }
};

struct RecordOptions {
    Readoff readoff = Readoff::final_position;
    int workers = 1;
};

// One forward pass per (persona, template) serves every party's vectors and
// the party-token probabilities.
ActivationStore record_activations(const Model& model, const Tokenizer& tokenizer,
                                   const std::vector<ValueVectorSelection>& selections, const CountryConfig& config,
                                   const std::vector<Persona>& personas, const RecordOptions& options = {});

// Population z-score per key over the whole batch, then a = z * cos.
void normalize_and_weight(ActivationStore& store);

// Per-party values for each (persona, template) column.
struct ScoreTable {
    std::vector<std::string> parties;
    std::size_t num_personas = 0;
    std::size_t num_templates = 0;
    std::vector<std::vector<double>> values;  // party x column
    std::vector<std::string> undefined;       // parties left out for lack of vectors
};

// A = mean of a over the party's retained vectors. Parties without vectors are
// logged as errors and listed in `undefined`; throws if no party remains.
ScoreTable party_scores(const ActivationStore& store);
ScoreTable party_probabilities(const ActivationStore& store);

enum class Source { latent, prob, survey, truth };
std::string to_string(Source s);

struct DistributionTable {
    Source source = Source::latent;
    std::string attribute;
    std::vector<std::string> parties;
    std::vector<std::string> categories;
    std::vector<std::vector<double>> rows;  // party x category, each sums to 1
    std::size_t num_personas = 0;
    std::size_t num_templates = 0;
    std::uint64_t seed = 0;

    const std::vector<double>& row(const std::string& party) const;
};

enum class LatentNorm { minshift, softmax };
enum class FloorRule {
    category_min,  // shift by the smallest category mean
    persona_min,   // shift by the smallest single A score of the party
};

struct LatentOptions {
    LatentNorm norm = LatentNorm::minshift;
    FloorRule floor = FloorRule::category_min;
};

DistributionTable latent_distribution(const ScoreTable& scores, const std::vector<Persona>& personas,
                                      const CountryConfig& config, std::size_t attribute,
                                      const LatentOptions& options = {});

// Per party: persona-weighted mean of the restricted probability within each
// category, normalized across categories.
DistributionTable probability_distribution(const ScoreTable& probs, const std::vector<Persona>& personas,
                                           const CountryConfig& config, std::size_t attribute);
DistributionTable probability_distribution(const Model& model, const Tokenizer& tokenizer,
                                           const std::vector<Persona>& personas, const CountryConfig& config,
                                           const std::vector<int>& party_tokens, std::size_t attribute,
                                           int workers = 1);

// Softmax over the logits of `tokens` only.
std::vector<double> restricted_distribution(std::span<const float> logits, const std::vector<int>& tokens);

DistributionTable survey_distribution(const CsvTable& survey, const CountryConfig& config, std::size_t attribute);
DistributionTable survey_distribution(const std::filesystem::path& path, const CountryConfig& config,
                                      std::size_t attribute);

// CSV "source,attribute,party,category,value".
std::string distributions_to_csv(const std::vector<DistributionTable>& tables);
std::vector<DistributionTable> distributions_from_csv(const std::string& text);

// Weights container plus a JSON index beside it (<path>.json).
void save_activation_store(const ActivationStore& store, const std::filesystem::path& path,
                           const std::string& meta_json = "{}");
ActivationStore load_activation_store(const std::filesystem::path& path);

}  // namespace mf

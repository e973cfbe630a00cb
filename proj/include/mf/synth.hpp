#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mf/aggregate.hpp"
#include "mf/model.hpp"
#include "mf/persona.hpp"
#include "mf/probe.hpp"

namespace mf {

struct PlantAttribute {
    std::string name;
    Scale scale = Scale::nominal;
    std::vector<std::string> categories;
    std::vector<std::vector<double>> log_odds;  // category x party
};

// Construction gains. Magnitudes are in residual-stream units unless noted.
struct PlantStrengths {
    double residual_scale = 3.0;     // shared bias direction in every embedding
    double topic_strength = 1.0;     // party direction in topic-word embeddings
    double marker_strength = 1.0;    // marker direction in category-word embeddings
    double affinity_strength = 0.5;  // log-odds carried by category words
    double query_gain = 2.0;         // layer-0 attention sharpness toward category words
    double value_gain = 0.25;        // layer-0 attention copy gain of the affinity subspace
    double key_bias = 4.5;           // planted pre-activation offset (keeps GELU near linear)
    double key_spread = 1.0;         // planted pre-activation spread across personas
    double value_scale = 0.1;        // norm of planted value vectors
    double norm_boost = 3.0;         // last-layer write along the bias direction
    double noise = 0.02;             // non-planted weights ~ N(0, (noise / sqrt(d))^2)
};

struct PlantSpec {
    ModelConfig model;  // vocab_size is derived from the vocabulary
    std::vector<std::string> parties;
    std::vector<PlantAttribute> attributes;
    std::vector<std::string> templates;
    std::optional<std::size_t> planted_layer;  // default floor(0.6 L)
    std::size_t aligned_per_party = 2;
    std::size_t diametric_per_party = 1;
    PlantStrengths strengths;
    double gamma = 0.0;
    std::uint64_t seed = 7;
    std::size_t statements = 240;
    std::size_t holdout_every = 10;  // every n-th statement of a party is held out

    void validate() const;
    std::size_t layer() const;
};

PlantSpec default_plant_spec();
PlantSpec parse_plant_spec(const std::string& json_text);
std::string plant_spec_to_json(const PlantSpec& spec);

struct PlantedNeuron {
    std::string party;
    std::size_t layer = 0;
    std::size_t neuron = 0;
    bool aligned = true;
};

struct PlantedModel {
    Model model;
    Tokenizer tokenizer;
    CountryConfig country;
    std::vector<int> party_tokens;
    std::vector<PlantedNeuron> neurons;
    double key_scale = 0.0;
    double output_scale = 0.0;  // norm of clean party unembedding rows
};

// Country config implied by a spec: uniform marginals, parties as their own tokens.
CountryConfig synth_country(const PlantSpec& spec);

PlantedModel plant_model(const PlantSpec& spec);

// Party rows become (1 - min(gamma, 1)) e + gamma r for one seeded unit r.
Model corrupt_output_head(const Model& model, const std::vector<int>& party_tokens, double gamma, std::uint64_t seed);

// P(party | persona) = softmax of summed log-odds.
std::vector<double> generator_conditional(const PlantSpec& spec, const Persona& persona);

struct SyntheticSurvey {
    std::vector<Persona> respondents;
    std::vector<std::size_t> party;  // index into spec.parties
};

SyntheticSurvey generate_synthetic_survey(const PlantSpec& spec, std::size_t n, std::uint64_t seed);
std::string survey_to_csv(const SyntheticSurvey& survey, const CountryConfig& country);

// Exact P(category | party) over the enumerated persona space.
std::vector<DistributionTable> truth_tables(const PlantSpec& spec);

ProbeCorpus synth_probe_corpus(const PlantSpec& spec);

}  // namespace mf

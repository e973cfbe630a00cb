#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "mf/aggregate.hpp"
#include "mf/select.hpp"

namespace mf {

namespace fs = std::filesystem;

struct RunConfig {
    fs::path base_dir = ".";  // relative paths resolve against this
    std::optional<fs::path> plant_spec;
    std::optional<fs::path> model, tokenizer, country, probe_corpus, survey, truth, marginals;
    std::optional<fs::path> selection_from;  // reuse another run's selection directory
    fs::path output_dir = "out";
    std::uint64_t seed = 7;
    std::size_t personas = 10000;
    std::size_t templates = 10;
    double entropy_threshold = 0.85;
    double fence = 2.5;
    LatentOptions latent{LatentNorm::minshift, FloorRule::persona_min};
    DiametricRule diametric = DiametricRule::mirrored;
    Readoff readoff = Readoff::final_position;
    std::optional<double> gamma;  // overrides the plant spec
    std::size_t survey_size = 10000;
    std::size_t vocab_top_k = 10;
    std::string model_tag = "model";
    int workers = 1;

    static RunConfig parse(const std::string& json_text, const fs::path& base_dir);
    static RunConfig load(const fs::path& path);

    // Settings that determine artifact contents. Output directory and worker
    // count are excluded so relocated or parallel reruns hash the same.
    std::string canonical_json() const;
    std::string hash() const;
    std::string meta_json(const std::string& stage) const;

    fs::path resolve(const fs::path& p) const;
    fs::path stage_dir(const std::string& stage) const { return output_dir / stage; }

    // Inputs fall back to the synth stage outputs when a plant spec is configured.
    fs::path model_path() const;
    fs::path tokenizer_path() const;
    fs::path country_path() const;
    fs::path probe_corpus_path() const;
    fs::path survey_path() const;
    std::optional<fs::path> truth_path() const;
};

void cmd_synth(const RunConfig& config);
void cmd_probe(const RunConfig& config);
void cmd_select(const RunConfig& config);
void cmd_forecast(const RunConfig& config);
void cmd_evaluate(const RunConfig& config);
void cmd_pipeline(const RunConfig& config);

// File-name-safe form of a party name.
std::string slug(const std::string& name);

}  // namespace mf

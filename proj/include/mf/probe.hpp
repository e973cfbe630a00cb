#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mf/model.hpp"

namespace mf {

enum class Split { train, holdout };

struct ProbeRecord {
    std::string statement;
    std::string party;
    Split split = Split::train;
};

struct ProbeCorpus {
    std::vector<ProbeRecord> records;
    std::vector<std::string> parties;  // in first-appearance order

    // Checks that every party has >= 2 train and >= 1 holdout records.
    void validate() const;
    std::vector<std::string> holdout_statements() const;
};

// CSV with header "statement,party,split".
ProbeCorpus load_probe_corpus(const std::filesystem::path& path);
void save_probe_corpus(const ProbeCorpus& corpus, const std::filesystem::path& path);

struct LayerBand {
    std::size_t first = 0;
    std::size_t last = 0;  // inclusive
    bool contains(std::size_t l) const { return l >= first && l <= last; }
};

// [floor(0.5 L), ceil(0.9 L)] clamped to [0, L-1].
LayerBand probing_layer_band(std::size_t num_layers);

struct EmbeddedCorpus {
    std::size_t layer = 0;
    Matrix vectors;                    // one mean-pooled residual per record
    std::vector<std::string> parties;  // label per record
    std::vector<Split> splits;
};

EmbeddedCorpus embed_corpus(const Model& model, const Tokenizer& tokenizer, const ProbeCorpus& corpus,
                            std::size_t layer, int workers = 1);

struct ProbeHyperparams {
    double learning_rate = 0.1;
    std::size_t epochs = 500;
    std::uint64_t seed = 0;  // recorded only; zero initialization makes training seed-free
};

struct Probe {
    std::string party;
    std::size_t layer = 0;
    Vec weight;  // W_o
    double positive_weight = 1.0;  // w_1
    ProbeHyperparams hyper;
    double final_loss = 0.0;
    std::vector<double> loss_history;  // loss before each epoch, then final

    double logit(std::span<const float> x) const { return dot_d(weight, x); }
};

// Weighted BCE with logits averaged over examples:
//   L = (1/N) sum_i [ -w1 y_i log s(z_i) - (1 - y_i) log(1 - s(z_i)) ],  z_i = W . x_i
struct WeightedBce {
    const Matrix* x = nullptr;
    std::vector<int> y;
    double w1 = 1.0;

    double loss(std::span<const double> w) const;
    std::vector<double> gradient(std::span<const double> w) const;
};

// Binary labels for `party` over the rows selected by `split`.
WeightedBce make_objective(const EmbeddedCorpus& embedded, const std::string& party, Split split, Matrix& rows_out);

Probe train_probe(const EmbeddedCorpus& embedded, const std::string& party, const ProbeHyperparams& hyper = {});

struct ProbeMetrics {
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Positive prediction iff sigma(z) > 0.5, i.e. z > 0.
ProbeMetrics evaluate_probe(const Probe& probe, const EmbeddedCorpus& embedded);
ProbeMetrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);

std::string probe_to_json(const Probe& probe, const std::string& meta_json = "{}");
Probe probe_from_json(const std::string& text);

}  // namespace mf

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mf/model.hpp"
#include "mf/probe.hpp"

namespace mf {

struct CosineProfile {
    std::string party;
    std::size_t layer = 0;
    std::vector<double> cosines;  // one per MLP neuron
    std::vector<std::size_t> zero_norm_neurons;  // reported with cosine 0
    double q1 = 0.0, q3 = 0.0, iqr = 0.0;
};

// cos(W_o, v_i) for every value vector of `layer`; quartiles are type-7.
CosineProfile cosine_profile(const Probe& probe, const Model& model, std::size_t layer);

struct Candidate {
    std::size_t layer = 0;
    std::size_t neuron = 0;
    double cosine = 0.0;
    bool operator==(const Candidate&) const = default;
};

struct CandidateSet {
    std::vector<Candidate> aligned;    // cosine > Q3 + fence * IQR
    std::vector<Candidate> diametric;  // cosine < Q1 - fence * IQR
};

// Strict inequalities at both fences.
CandidateSet iqr_select(const CosineProfile& profile, double fence = 2.5);

enum class DiametricRule {
    mirrored,  // diametric retained iff median delta < 0
    same,      // diametric retained iff median delta > 0
};

struct RetainedVector {
    std::size_t layer = 0;
    std::size_t neuron = 0;
    double cosine = 0.0;
    double median_delta = 0.0;  // median over prompts of delta log p(t_o)
};

struct ValueVectorSelection {
    std::string party;
    int party_token = -1;
    std::vector<RetainedVector> aligned;
    std::vector<RetainedVector> diametric;
    std::vector<RetainedVector> rejected;  // candidates that failed validation

    std::vector<RetainedVector> retained() const;
    bool empty() const { return aligned.empty() && diametric.empty(); }
};

// Sign-inversion validation at the final token of each held-out prompt.
ValueVectorSelection validate_by_sign_inversion(const Model& model, const CandidateSet& candidates,
                                                const std::string& party, int party_token,
                                                const std::vector<std::vector<int>>& heldout_prompts,
                                                DiametricRule rule = DiametricRule::mirrored, int workers = 1);

struct VocabEntry {
    int token = 0;
    double cosine = 0.0;
};

struct VocabProjection {
    std::vector<VocabEntry> top;
    std::vector<int> excluded_tokens;  // zero-norm unembedding rows
};

// Tokens ranked by cos(v_i^l, e_t), descending, ties by ascending id.
VocabProjection project_to_vocab(const Model& model, std::size_t layer, std::size_t neuron, std::size_t k);

std::string selection_to_json(const ValueVectorSelection& sel, const std::string& meta_json = "{}");
ValueVectorSelection selection_from_json(const std::string& text);

}  // namespace mf

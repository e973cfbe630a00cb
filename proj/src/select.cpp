#include "mf/select.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "mf/util.hpp"

namespace mf {

using json = nlohmann::json;

CosineProfile cosine_profile(const Probe& probe, const Model& model, std::size_t layer) {
    const auto& cfg = model.config();
    if (layer >= cfg.num_layers) throw std::out_of_range("cosine_profile: layer out of range");
    if (probe.weight.size() != cfg.model_dim) throw std::invalid_argument("cosine_profile: probe dimension mismatch");
    const double wnorm = norm_d(probe.weight);
    if (wnorm == 0.0) throw std::invalid_argument("cosine_profile: probe weight is zero");

    CosineProfile p;
    p.party = probe.party;
    p.layer = layer;
    p.cosines.resize(cfg.mlp_dim);
    const auto& wv = model.layer(layer).mlp_value;
    for (std::size_t i = 0; i < cfg.mlp_dim; ++i) {
        double d = 0.0, vv = 0.0;
        for (std::size_t c = 0; c < cfg.model_dim; ++c) {
            d += static_cast<double>(probe.weight[c]) * wv(c, i);
            vv += static_cast<double>(wv(c, i)) * wv(c, i);
        }
        if (vv == 0.0) {
            p.zero_norm_neurons.push_back(i);
            p.cosines[i] = 0.0;
            continue;
        }
        p.cosines[i] = std::clamp(d / (wnorm * std::sqrt(vv)), -1.0, 1.0);
    }
    if (!p.zero_norm_neurons.empty())
        log_warn("cosine_profile: " + std::to_string(p.zero_norm_neurons.size()) +
                 " zero-norm value vectors in layer " + std::to_string(layer));
    p.q1 = quantile(p.cosines, 0.25);
    p.q3 = quantile(p.cosines, 0.75);
    p.iqr = p.q3 - p.q1;
    return p;
}

CandidateSet iqr_select(const CosineProfile& profile, double fence) {
    if (profile.cosines.size() < 4) throw std::invalid_argument("iqr_select: need at least 4 neurons");
    const double lo = profile.q1 - fence * profile.iqr;
    const double hi = profile.q3 + fence * profile.iqr;
    CandidateSet out;
    for (std::size_t i = 0; i < profile.cosines.size(); ++i) {
        const double c = profile.cosines[i];
        if (!(c > hi || c < lo)) continue;
        if (c > 0.0)
            out.aligned.push_back({profile.layer, i, c});
        else if (c < 0.0)
            out.diametric.push_back({profile.layer, i, c});
    }
    return out;
}

std::vector<RetainedVector> ValueVectorSelection::retained() const {
    std::vector<RetainedVector> out = aligned;
    out.insert(out.end(), diametric.begin(), diametric.end());
    return out;
}

ValueVectorSelection validate_by_sign_inversion(const Model& model, const CandidateSet& candidates,
                                                const std::string& party, int party_token,
                                                const std::vector<std::vector<int>>& heldout_prompts,
                                                DiametricRule rule, int workers) {
    if (heldout_prompts.empty()) throw InputError("validate_by_sign_inversion: empty prompt set");
    std::vector<ForwardTrace> traces(heldout_prompts.size());
    parallel_for(heldout_prompts.size(), workers,
                 [&](std::size_t i) { traces[i] = forward(model, heldout_prompts[i]); });

    std::vector<Candidate> all = candidates.aligned;
    all.insert(all.end(), candidates.diametric.begin(), candidates.diametric.end());
    std::vector<double> medians(all.size());
    parallel_for(all.size(), workers, [&](std::size_t c) {
        std::vector<double> deltas;
        deltas.reserve(traces.size());
        for (const auto& t : traces)
            deltas.push_back(sign_inversion_delta(model, t, all[c].layer, all[c].neuron, party_token, t.seq_len() - 1));
        medians[c] = median(std::move(deltas));
    });

    ValueVectorSelection sel;
    sel.party = party;
    sel.party_token = party_token;
    for (std::size_t c = 0; c < all.size(); ++c) {
        const bool is_aligned = c < candidates.aligned.size();
        RetainedVector r{all[c].layer, all[c].neuron, all[c].cosine, medians[c]};
        bool keep = false;
        if (is_aligned)
            keep = medians[c] > 0.0;
        else
            keep = rule == DiametricRule::mirrored ? medians[c] < 0.0 : medians[c] > 0.0;
        if (!keep)
            sel.rejected.push_back(r);
        else if (is_aligned)
            sel.aligned.push_back(r);
        else
            sel.diametric.push_back(r);
    }
    return sel;
}

VocabProjection project_to_vocab(const Model& model, std::size_t layer, std::size_t neuron, std::size_t k) {
    const auto& cfg = model.config();
    if (k > cfg.vocab_size) throw std::invalid_argument("project_to_vocab: k exceeds vocabulary size");
    const Vec v = model.value_vector(layer, neuron);
    const double vnorm = norm_d(v);
    const auto& e = model.weights().unembed;
    VocabProjection out;
    std::vector<VocabEntry> all;
    all.reserve(cfg.vocab_size);
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
        const double en = norm_d(e.row(t));
        if (en == 0.0) {
            out.excluded_tokens.push_back(static_cast<int>(t));
            continue;
        }
        const double c = vnorm == 0.0 ? 0.0 : dot_d(v, e.row(t)) / (vnorm * en);
        all.push_back({static_cast<int>(t), c});
    }
    if (!out.excluded_tokens.empty())
        log_debug("project_to_vocab: excluded " + std::to_string(out.excluded_tokens.size()) +
                  " zero-norm unembedding rows");
    std::stable_sort(all.begin(), all.end(), [](const VocabEntry& a, const VocabEntry& b) {
        if (a.cosine != b.cosine) return a.cosine > b.cosine;
        return a.token < b.token;
    });
    if (all.size() > k) all.resize(k);
    out.top = std::move(all);
    return out;
}

namespace {

json retained_to_json(const std::vector<RetainedVector>& v) {
    json arr = json::array();
    for (const auto& r : v)
        arr.push_back({{"layer", r.layer}, {"neuron", r.neuron}, {"cosine", r.cosine}, {"median_delta", r.median_delta}});
    return arr;
}

std::vector<RetainedVector> retained_from_json(const json& arr) {
    std::vector<RetainedVector> out;
    for (const auto& e : arr)
        out.push_back({e.at("layer").get<std::size_t>(), e.at("neuron").get<std::size_t>(), e.at("cosine").get<double>(),
                       e.at("median_delta").get<double>()});
    return out;
}

}  // namespace

std::string selection_to_json(const ValueVectorSelection& sel, const std::string& meta_json) {
    json j;
    j["party"] = sel.party;
    j["party_token"] = sel.party_token;
    j["aligned"] = retained_to_json(sel.aligned);
    j["diametric"] = retained_to_json(sel.diametric);
    j["rejected"] = retained_to_json(sel.rejected);
    j["meta"] = json::parse(meta_json);
    return j.dump(2) + "\n";
}

ValueVectorSelection selection_from_json(const std::string& text) {
    try {
        json j = json::parse(text);
        ValueVectorSelection s;
        s.party = j.at("party").get<std::string>();
        s.party_token = j.at("party_token").get<int>();
        s.aligned = retained_from_json(j.at("aligned"));
        s.diametric = retained_from_json(j.at("diametric"));
        if (j.contains("rejected")) s.rejected = retained_from_json(j.at("rejected"));
        return s;
    } catch (const json::exception& e) {
        throw InputError(std::string("selection artifact: ") + e.what());
    }
}

}  // namespace mf

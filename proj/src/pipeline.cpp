#include "mf/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "json.hpp"
#include "mf/metrics.hpp"
#include "mf/persona.hpp"
#include "mf/probe.hpp"
#include "mf/synth.hpp"
#include "mf/util.hpp"

namespace mf {

using json = nlohmann::json;

namespace {

std::string norm_name(LatentNorm n) { return n == LatentNorm::minshift ? "minshift" : "softmax"; }
std::string floor_name(FloorRule f) { return f == FloorRule::persona_min ? "persona_min" : "category_min"; }
std::string rule_name(DiametricRule r) { return r == DiametricRule::mirrored ? "mirrored" : "same"; }
std::string readoff_name(Readoff r) { return r == Readoff::final_position ? "final" : "mean"; }

template <typename T>
T pick(const std::string& key, const std::string& value, std::initializer_list<std::pair<const char*, T>> options) {
    std::string allowed;
    for (const auto& [name, v] : options) {
        if (value == name) return v;
        allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    }
    throw InputError("run config: " + key + " must be one of {" + allowed + "}, got '" + value + "'");
}

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw InputError(what + " not found: " + p.string());
}

// Wraps a stage so errors carry the stage name.
template <typename F>
void stage(const std::string& name, F&& body) {
    log_info("stage " + name + ": start");
    try {
        body();
    } catch (const InputError& e) {
        throw InputError(name + ": " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(name + ": " + e.what());
    }
    log_info("stage " + name + ": done");
}

void write_meta(const RunConfig& cfg, const std::string& stage_name) {
    write_file(cfg.stage_dir(stage_name) / "meta.json", json::parse(cfg.meta_json(stage_name)).dump(2) + "\n");
}

std::vector<std::vector<int>> holdout_prompts(const ProbeCorpus& corpus, const Tokenizer& tok) {
    std::vector<std::vector<int>> out;
    for (const auto& s : corpus.holdout_statements()) out.push_back(tok.encode(s));
    return out;
}

fs::path probe_file(const RunConfig& cfg, const std::string& party, std::size_t layer) {
    return cfg.stage_dir("probes") / ("probe_" + slug(party) + "_L" + std::to_string(layer) + ".json");
}

fs::path selection_file(const fs::path& dir, const std::string& party) {
    return dir / ("selection_" + slug(party) + ".json");
}

std::vector<DistributionTable> read_tables(const fs::path& p, Source source) {
    std::vector<DistributionTable> out;
    for (auto& t : distributions_from_csv(read_file(p)))
        if (t.source == source) out.push_back(std::move(t));
    return out;
}

// Puts rows and columns of a loaded table into schema order.
DistributionTable reorder(const DistributionTable& t, const CountryConfig& country) {
    const auto& schema = country.attributes[country.attribute_index(t.attribute)];
    DistributionTable out = t;
    out.categories.clear();
    out.parties.clear();
    out.rows.clear();
    for (const auto& party : country.party_names()) {
        auto pit = std::find(t.parties.begin(), t.parties.end(), party);
        if (pit == t.parties.end()) continue;
        std::vector<double> row;
        for (const auto& c : schema.categories) {
            auto cit = std::find(t.categories.begin(), t.categories.end(), c.name);
            if (cit == t.categories.end())
                throw InputError("table '" + t.attribute + "' lacks category '" + c.name + "'");
            row.push_back(t.rows[static_cast<std::size_t>(pit - t.parties.begin())]
                                [static_cast<std::size_t>(cit - t.categories.begin())]);
        }
        out.parties.push_back(party);
        out.rows.push_back(std::move(row));
    }
    for (const auto& c : schema.categories) out.categories.push_back(c.name);
    return out;
}

}  // namespace

std::string slug(const std::string& name) {
    std::string out;
    for (unsigned char c : name) out += std::isalnum(c) ? static_cast<char>(c) : '_';
    return out.empty() ? "_" : out;
}

// ---- RunConfig -------------------------------------------------------------

RunConfig RunConfig::parse(const std::string& json_text, const fs::path& base_dir) {
    RunConfig c;
    c.base_dir = base_dir;
    try {
        json j = json::parse(json_text);
        auto path = [&](const char* key, std::optional<fs::path>& dst) {
            if (j.contains(key)) dst = j[key].get<std::string>();
        };
        path("plant_spec", c.plant_spec);
        path("model", c.model);
        path("tokenizer", c.tokenizer);
        path("country", c.country);
        path("probe_corpus", c.probe_corpus);
        path("survey", c.survey);
        path("truth", c.truth);
        path("marginals", c.marginals);
        path("selection_from", c.selection_from);
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
        c.seed = j.value("seed", c.seed);
        c.personas = j.value("personas", c.personas);
        c.templates = j.value("templates", c.templates);
        c.entropy_threshold = j.value("entropy_threshold", c.entropy_threshold);
        c.fence = j.value("fence", c.fence);
        c.latent.norm = pick<LatentNorm>("norm", j.value("norm", std::string("minshift")),
                                         {{"minshift", LatentNorm::minshift}, {"softmax", LatentNorm::softmax}});
        c.latent.floor = pick<FloorRule>("floor", j.value("floor", std::string("persona_min")),
                                         {{"persona_min", FloorRule::persona_min},
                                          {"category_min", FloorRule::category_min}});
        c.diametric = pick<DiametricRule>("diametric_rule", j.value("diametric_rule", std::string("mirrored")),
                                          {{"mirrored", DiametricRule::mirrored}, {"same", DiametricRule::same}});
        c.readoff = pick<Readoff>("readoff", j.value("readoff", std::string("final")),
                                  {{"final", Readoff::final_position}, {"mean", Readoff::mean_over_positions}});
        if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
        c.survey_size = j.value("survey_size", c.survey_size);
        c.vocab_top_k = j.value("vocab_top_k", c.vocab_top_k);
        c.model_tag = j.value("model_tag", c.model_tag);
        c.workers = j.value("workers", c.workers);
    } catch (const json::exception& e) {
        throw InputError(std::string("run config: ") + e.what());
    }
    if (c.personas == 0) throw InputError("run config: personas must be >= 1");
    if (c.templates == 0) throw InputError("run config: templates must be >= 1");
    if (!(c.fence > 0.0)) throw InputError("run config: fence must be positive");
    if (c.workers < 1) throw InputError("run config: workers must be >= 1");
    if (!c.plant_spec && !c.model) throw InputError("run config: either plant_spec or model is required");
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    require_file(path, "run config");
    return parse(read_file(path), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

std::string RunConfig::canonical_json() const {
    json j;
    auto put = [&](const char* key, const std::optional<fs::path>& p) {
        if (p) j[key] = p->generic_string();
    };
    put("plant_spec", plant_spec);
    put("model", model);
    put("tokenizer", tokenizer);
    put("country", country);
    put("probe_corpus", probe_corpus);
    put("survey", survey);
    put("truth", truth);
    put("marginals", marginals);
    put("selection_from", selection_from);
    j["seed"] = seed;
    j["personas"] = personas;
    j["templates"] = templates;
    j["entropy_threshold"] = entropy_threshold;
    j["fence"] = fence;
    j["norm"] = norm_name(latent.norm);
    j["floor"] = floor_name(latent.floor);
    j["diametric_rule"] = rule_name(diametric);
    j["readoff"] = readoff_name(readoff);
    if (gamma) j["gamma"] = *gamma;
    j["survey_size"] = survey_size;
    j["vocab_top_k"] = vocab_top_k;
    j["model_tag"] = model_tag;
    return j.dump();
}

std::string RunConfig::hash() const { return hex64(fnv1a64(canonical_json())); }

std::string RunConfig::meta_json(const std::string& stage_name) const {
    json j;
    j["config_hash"] = hash();
    j["seed"] = seed;
    j["stage"] = stage_name;
    j["versions"] = {{"mf", std::string(kVersion)}};
    j["config"] = json::parse(canonical_json());
    return j.dump();
}

fs::path RunConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

fs::path RunConfig::model_path() const { return model ? resolve(*model) : stage_dir("synth") / "model.mfw"; }
fs::path RunConfig::tokenizer_path() const {
    if (tokenizer) return resolve(*tokenizer);
    if (plant_spec) return stage_dir("synth") / "tokenizer.json";
    throw InputError("run config: tokenizer path is required");
}
fs::path RunConfig::country_path() const {
    if (country) return resolve(*country);
    if (plant_spec) return stage_dir("synth") / "country.json";
    throw InputError("run config: country config path is required");
}
fs::path RunConfig::probe_corpus_path() const {
    if (probe_corpus) return resolve(*probe_corpus);
    if (plant_spec) return stage_dir("synth") / "probe_corpus.csv";
    throw InputError("run config: probe corpus path is required");
}
fs::path RunConfig::survey_path() const {
    if (survey) return resolve(*survey);
    if (plant_spec) return stage_dir("synth") / "survey.csv";
    throw InputError("run config: survey path is required");
}
std::optional<fs::path> RunConfig::truth_path() const {
    if (truth) return resolve(*truth);
    if (plant_spec) return stage_dir("synth") / "truth.csv";
    return std::nullopt;
}

// ---- stages ----------------------------------------------------------------

void cmd_synth(const RunConfig& cfg) {
    stage("synth", [&] {
        if (!cfg.plant_spec) throw InputError("run config: plant_spec is required for synth");
        const fs::path spec_path = cfg.resolve(*cfg.plant_spec);
        require_file(spec_path, "plant spec");
        PlantSpec spec = parse_plant_spec(read_file(spec_path));
        spec.seed = cfg.seed;
        if (cfg.gamma) spec.gamma = *cfg.gamma;
        spec.validate();

        const fs::path dir = cfg.stage_dir("synth");
        const std::string meta = cfg.meta_json("synth");
        PlantedModel planted = plant_model(spec);
        save_model(planted.model, dir / "model.mfw", meta);
        planted.tokenizer.save(dir / "tokenizer.json");
        write_file(dir / "country.json", country_config_to_json(planted.country));
        save_probe_corpus(synth_probe_corpus(spec), dir / "probe_corpus.csv");
        const auto survey = generate_synthetic_survey(spec, cfg.survey_size, cfg.seed ^ 0x5a17eULL);
        write_file(dir / "survey.csv", survey_to_csv(survey, planted.country));
        write_file(dir / "truth.csv", distributions_to_csv(truth_tables(spec)));

        json info = json::parse(plant_spec_to_json(spec));
        info["planted_neurons"] = json::array();
        for (const auto& n : planted.neurons)
            info["planted_neurons"].push_back({{"party", n.party},
                                               {"layer", n.layer},
                                               {"neuron", n.neuron},
                                               {"kind", n.aligned ? "aligned" : "diametric"}});
        info["key_scale"] = planted.key_scale;
        info["output_scale"] = planted.output_scale;
        info["party_tokens"] = planted.party_tokens;
        info["meta"] = json::parse(meta);
        write_file(dir / "plant.json", info.dump(2) + "\n");
        write_meta(cfg, "synth");
    });
}

void cmd_probe(const RunConfig& cfg) {
    stage("probe", [&] {
        require_file(cfg.model_path(), "model");
        require_file(cfg.tokenizer_path(), "tokenizer");
        require_file(cfg.probe_corpus_path(), "probe corpus");
        const Model model = load_model(cfg.model_path());
        const Tokenizer tok = Tokenizer::load(cfg.tokenizer_path());
        const ProbeCorpus corpus = load_probe_corpus(cfg.probe_corpus_path());
        const LayerBand band = probing_layer_band(model.config().num_layers);
        const std::string meta = cfg.meta_json("probe");

        std::string metrics = "party,layer,precision,recall,f1,tp,fp,tn,fn,final_loss\n";
        std::string losses = "party,layer,epoch,loss\n";
        for (std::size_t l = band.first; l <= band.last; ++l) {
            const EmbeddedCorpus emb = embed_corpus(model, tok, corpus, l, cfg.workers);
            for (const auto& party : corpus.parties) {
                Probe probe = train_probe(emb, party, {0.1, 500, cfg.seed});
                const ProbeMetrics m = evaluate_probe(probe, emb);
                write_file(probe_file(cfg, party, l), probe_to_json(probe, meta));
                metrics += csv_line({party, std::to_string(l), format_double(m.precision), format_double(m.recall),
                                     format_double(m.f1), std::to_string(m.tp), std::to_string(m.fp),
                                     std::to_string(m.tn), std::to_string(m.fn), format_double(probe.final_loss)});
                for (std::size_t e = 0; e < probe.loss_history.size(); ++e)
                    losses += csv_line({party, std::to_string(l), std::to_string(e), format_double(probe.loss_history[e])});
                if (m.f1 < 0.96)
                    log_warn("probe " + party + " layer " + std::to_string(l) + ": holdout F1 " + format_double(m.f1));
            }
        }
        write_file(cfg.stage_dir("probes") / "metrics.csv", metrics);
        write_file(cfg.stage_dir("probes") / "loss.csv", losses);
        write_meta(cfg, "probes");
    });
}

void cmd_select(const RunConfig& cfg) {
    stage("select", [&] {
        require_file(cfg.model_path(), "model");
        const Model model = load_model(cfg.model_path());
        const Tokenizer tok = Tokenizer::load(cfg.tokenizer_path());
        const CountryConfig country = load_country_config(cfg.country_path());
        const auto tokens = party_token_ids(country, tok);
        const fs::path dir = cfg.stage_dir("selection");
        const std::string meta = cfg.meta_json("selection");

        std::string candidates_csv = "party,layer,neuron,cosine,kind,median_delta,retained\n";
        std::string profiles_csv = "party,layer,q1,q3,iqr,lower_fence,upper_fence,zero_norm_vectors\n";
        std::string vocab_csv = "party,layer,neuron,kind,rank,token,surface,cosine\n";

        std::vector<ValueVectorSelection> selections;
        if (cfg.selection_from) {
            const fs::path from = cfg.resolve(*cfg.selection_from);
            for (const auto& party : country.party_names()) {
                require_file(selection_file(from, party), "selection to reuse");
                selections.push_back(selection_from_json(read_file(selection_file(from, party))));
            }
            log_info("select: reusing selection from " + from.string());
        } else {
            const ProbeCorpus corpus = load_probe_corpus(cfg.probe_corpus_path());
            const auto prompts = holdout_prompts(corpus, tok);
            const LayerBand band = probing_layer_band(model.config().num_layers);
            for (std::size_t o = 0; o < country.parties.size(); ++o) {
                const std::string& party = country.parties[o].name;
                CandidateSet all;
                for (std::size_t l = band.first; l <= band.last; ++l) {
                    require_file(probe_file(cfg, party, l), "probe artifact");
                    const Probe probe = probe_from_json(read_file(probe_file(cfg, party, l)));
                    const CosineProfile prof = cosine_profile(probe, model, l);
                    const CandidateSet c = iqr_select(prof, cfg.fence);
                    profiles_csv += csv_line({party, std::to_string(l), format_double(prof.q1), format_double(prof.q3),
                                              format_double(prof.iqr), format_double(prof.q1 - cfg.fence * prof.iqr),
                                              format_double(prof.q3 + cfg.fence * prof.iqr),
                                              std::to_string(prof.zero_norm_neurons.size())});
                    all.aligned.insert(all.aligned.end(), c.aligned.begin(), c.aligned.end());
                    all.diametric.insert(all.diametric.end(), c.diametric.begin(), c.diametric.end());
                }
                ValueVectorSelection sel;
                if (all.aligned.empty() && all.diametric.empty()) {
                    log_warn("select: no candidates outside the fence for '" + party + "'");
                    sel.party = party;
                    sel.party_token = tokens[o];
                } else {
                    sel = validate_by_sign_inversion(model, all, party, tokens[o], prompts, cfg.diametric, cfg.workers);
                }
                auto row = [&](const RetainedVector& r, const char* kind, bool kept) {
                    candidates_csv += csv_line({party, std::to_string(r.layer), std::to_string(r.neuron),
                                                format_double(r.cosine), kind, format_double(r.median_delta),
                                                kept ? "1" : "0"});
                };
                for (const auto& r : sel.aligned) row(r, "aligned", true);
                for (const auto& r : sel.diametric) row(r, "diametric", true);
                for (const auto& r : sel.rejected) row(r, r.cosine > 0 ? "aligned" : "diametric", false);
                selections.push_back(std::move(sel));
            }
        }
        for (const auto& sel : selections) {
            if (sel.empty()) log_warn("select: party '" + sel.party + "' has no retained vectors; excluded downstream");
            write_file(selection_file(dir, sel.party), selection_to_json(sel, meta));
            for (const auto& r : sel.retained()) {
                const auto proj = project_to_vocab(model, r.layer, r.neuron, std::min(cfg.vocab_top_k, tok.size()));
                for (std::size_t k = 0; k < proj.top.size(); ++k)
                    vocab_csv += csv_line({sel.party, std::to_string(r.layer), std::to_string(r.neuron),
                                           r.cosine > 0 ? "aligned" : "diametric", std::to_string(k + 1),
                                           std::to_string(proj.top[k].token), tok.surface(proj.top[k].token),
                                           format_double(proj.top[k].cosine)});
            }
        }
        if (!cfg.selection_from) {
            write_file(dir / "candidates.csv", candidates_csv);
            write_file(dir / "profiles.csv", profiles_csv);
        }
        write_file(dir / "vocab.csv", vocab_csv);
        write_meta(cfg, "selection");
    });
}

void cmd_forecast(const RunConfig& cfg) {
    stage("forecast", [&] {
        const Model model = load_model(cfg.model_path());
        const Tokenizer tok = Tokenizer::load(cfg.tokenizer_path());
        const CountryConfig country = with_templates(load_country_config(cfg.country_path()), cfg.templates);
        Marginals marginals;
        if (cfg.marginals)
            marginals = load_marginals(cfg.resolve(*cfg.marginals), country);
        else if (country.marginals)
            marginals = *country.marginals;
        else
            marginals = uniform_marginals(country);
        const auto personas = sample_personas(country, marginals, cfg.personas, cfg.seed ^ 0x9e75aULL);

        std::vector<ValueVectorSelection> selections;
        for (const auto& party : country.party_names()) {
            const fs::path f = selection_file(cfg.stage_dir("selection"), party);
            require_file(f, "selection artifact");
            auto sel = selection_from_json(read_file(f));
            if (sel.empty()) {
                log_warn("forecast: '" + party + "' has no retained vectors; latent rows omitted");
                continue;
            }
            selections.push_back(std::move(sel));
        }
        ActivationStore store = record_activations(model, tok, selections, country, personas,
                                                   {cfg.readoff, cfg.workers});
        normalize_and_weight(store);
        const fs::path dir = cfg.stage_dir("forecast");
        const std::string meta = cfg.meta_json("forecast");
        save_activation_store(store, dir / "activations.mfw", meta);

        const ScoreTable scores = party_scores(store);
        const ScoreTable probs = party_probabilities(store);
        std::vector<DistributionTable> tables;
        for (std::size_t k = 0; k < country.attributes.size(); ++k) {
            auto lt = latent_distribution(scores, personas, country, k, cfg.latent);
            auto pt = probability_distribution(probs, personas, country, k);
            lt.seed = pt.seed = cfg.seed;
            tables.push_back(std::move(lt));
            tables.push_back(std::move(pt));
        }
        write_file(dir / "distributions.csv", distributions_to_csv(tables));

        std::vector<std::string> header{"persona"};
        for (const auto& a : country.attributes) header.push_back(a.name);
        std::string personas_csv = csv_line(header);
        for (const auto& p : personas) {
            std::vector<std::string> f{std::to_string(p.id)};
            for (std::size_t a = 0; a < country.attributes.size(); ++a)
                f.push_back(country.attributes[a].categories[p.categories[a]].name);
            personas_csv += csv_line(f);
        }
        write_file(dir / "personas.csv", personas_csv);
        write_meta(cfg, "forecast");
    });
}

void cmd_evaluate(const RunConfig& cfg) {
    stage("evaluate", [&] {
        const CountryConfig country = load_country_config(cfg.country_path());
        const fs::path dist_path = cfg.stage_dir("forecast") / "distributions.csv";
        require_file(dist_path, "forecast distributions");
        require_file(cfg.survey_path(), "survey");
        std::vector<DistributionTable> latent, prob, survey;
        for (const auto& t : read_tables(dist_path, Source::latent)) latent.push_back(reorder(t, country));
        for (const auto& t : read_tables(dist_path, Source::prob)) prob.push_back(reorder(t, country));
        const CsvTable survey_csv = read_csv(cfg.survey_path());
        for (std::size_t k = 0; k < country.attributes.size(); ++k)
            survey.push_back(survey_distribution(survey_csv, country, k));

        const auto records = distance_delta(latent, prob, survey, country, cfg.model_tag, country.country);
        if (records.empty()) throw InputError("evaluate: no distance records");
        const fs::path dir = cfg.stage_dir("evaluate");
        write_file(dir / "distances.csv", distance_records_csv(records));

        const std::vector<std::string> by_party{"model", "country", "party"};
        const std::vector<std::string> by_attr{"model", "country", "attribute"};
        const std::vector<std::string> overall_key{"model", "country"};
        std::string wr = win_rates_csv(win_rates(records, overall_key), overall_key);
        write_file(dir / "win_rates.csv", wr);
        write_file(dir / "win_rates_by_party.csv", win_rates_csv(win_rates(records, by_party), by_party));
        write_file(dir / "win_rates_by_attribute.csv", win_rates_csv(win_rates(records, by_attr), by_attr));
        write_file(dir / "win_rates.svg", win_rate_svg(records, "latent win-rate per attribute (" + cfg.model_tag + ")"));

        const GateReport gate = entropy_gate(latent, prob, survey, cfg.entropy_threshold, cfg.model_tag);
        write_file(dir / "entropy.csv", gate_rows_csv(gate));
        write_file(dir / "gate.csv", gate_summary_csv(gate));

        const auto shares = survey_party_shares(survey_csv, country.party_names());
        std::string share_csv = "source,attribute,party,category,abs_error\n";
        json share_summary = json::object();
        for (const auto& [name, tables] : {std::pair{std::string("latent"), &latent}, std::pair{std::string("prob"), &prob}}) {
            std::vector<double> all;
            for (std::size_t k = 0; k < tables->size(); ++k) {
                const auto& est = (*tables)[k];
                if (est.parties.size() != country.parties.size()) continue;
                ShareErrors e;
                try {
                    e = conditional_share_error(joint_from_conditional(est, shares),
                                                joint_from_conditional(survey[k], shares),
                                                Conditional::party_given_category);
                } catch (const InputError& err) {
                    log_warn("evaluate: share errors for " + name + " '" + est.attribute + "' skipped: " + err.what());
                    continue;
                }
                share_csv += share_errors_csv(name, est.attribute, e);
                for (const auto& row : e.error) all.insert(all.end(), row.begin(), row.end());
            }
            if (!all.empty()) share_summary[name] = median(all);
        }
        write_file(dir / "share_errors.csv", share_csv);

        json summary;
        summary["records"] = records.size();
        summary["win_rate"] = win_rates(records, {})[0].rate;
        summary["gate"] = {{"threshold", cfg.entropy_threshold}, {"substitutions", gate.substitutions}};
        summary["share_error_median"] = share_summary;

        std::vector<double> deltas, entropies;
        for (const auto& r : records) {
            deltas.push_back(r.delta);
            const auto& pt = *std::find_if(prob.begin(), prob.end(), [&](const auto& t) { return t.attribute == r.attribute; });
            entropies.push_back(normalized_entropy(pt.row(r.party)));
        }
        try {
            const LinearFit fit = fit_delta_entropy(deltas, entropies);
            summary["regression"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r", fit.r}, {"n", fit.n}};
        } catch (const InputError& e) {
            log_warn(std::string("evaluate: regression skipped: ") + e.what());
            summary["regression"] = nullptr;
        }

        auto survey_errors = [&](const std::vector<DistributionTable>& est) {
            std::vector<double> all;
            for (const auto& t : est)
                for (std::size_t o = 0; o < t.parties.size(); ++o) {
                    const auto& s = std::find_if(survey.begin(), survey.end(), [&](const auto& x) {
                                        return x.attribute == t.attribute;
                                    })->row(t.parties[o]);
                    for (std::size_t g = 0; g < t.categories.size(); ++g) all.push_back(std::fabs(t.rows[o][g] - s[g]));
                }
            return median(all);
        };
        summary["survey_error_median"] = {{"latent", survey_errors(latent)}, {"prob", survey_errors(prob)}};

        const auto truth_path = cfg.truth_path();
        if (truth_path && fs::exists(*truth_path)) {
            std::vector<DistributionTable> truth;
            for (const auto& t : read_tables(*truth_path, Source::truth)) truth.push_back(reorder(t, country));
            std::string csv = "source,attribute,party,category,abs_error\n";
            json medians = json::object();
            for (const auto& [name, tables] :
                 {std::pair{std::string("latent"), &latent}, std::pair{std::string("prob"), &prob}}) {
                std::vector<double> all;
                for (const auto& t : *tables) {
                    const auto& tt = *std::find_if(truth.begin(), truth.end(),
                                                   [&](const auto& x) { return x.attribute == t.attribute; });
                    for (std::size_t o = 0; o < t.parties.size(); ++o)
                        for (std::size_t g = 0; g < t.categories.size(); ++g) {
                            const double e = std::fabs(t.rows[o][g] - tt.row(t.parties[o])[g]);
                            all.push_back(e);
                            csv += csv_line({name, t.attribute, t.parties[o], t.categories[g], format_double(e)});
                        }
                }
                medians[name] = median(all);
            }
            write_file(dir / "truth_errors.csv", csv);
            summary["truth_error_median"] = medians;
        }
        summary["meta"] = json::parse(cfg.meta_json("evaluate"));
        write_file(dir / "summary.json", summary.dump(2) + "\n");
        write_meta(cfg, "evaluate");
    });
}

void cmd_pipeline(const RunConfig& cfg) {
    if (cfg.plant_spec) cmd_synth(cfg);
    if (!cfg.selection_from) cmd_probe(cfg);
    cmd_select(cfg);
    cmd_forecast(cfg);
    cmd_evaluate(cfg);
}

}  // namespace mf

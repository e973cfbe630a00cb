#include "mf/probe.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "mf/util.hpp"

namespace mf {

using json = nlohmann::json;

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

void ProbeCorpus::validate() const {
    if (records.empty()) throw InputError("probe corpus is empty");
    for (const auto& p : parties) {
        std::size_t train = 0, holdout = 0;
        for (const auto& r : records) {
            if (r.party != p) continue;
            (r.split == Split::train ? train : holdout)++;
        }
        if (train < 2 || holdout < 1)
            throw InputError("probe corpus: party '" + p + "' needs >= 2 train and >= 1 holdout records (has " +
                             std::to_string(train) + " / " + std::to_string(holdout) + ")");
    }
}

std::vector<std::string> ProbeCorpus::holdout_statements() const {
    std::vector<std::string> out;
    for (const auto& r : records)
        if (r.split == Split::holdout) out.push_back(r.statement);
    return out;
}

ProbeCorpus load_probe_corpus(const std::filesystem::path& path) {
    CsvTable t = read_csv(path);
    const int cs = t.column("statement"), cp = t.column("party"), cl = t.column("split");
    if (cs < 0 || cp < 0 || cl < 0) throw InputError(path.string() + ": expected header statement,party,split");
    ProbeCorpus c;
    for (const auto& row : t.rows) {
        ProbeRecord r{row[cs], row[cp], Split::train};
        if (row[cl] == "holdout")
            r.split = Split::holdout;
        else if (row[cl] != "train")
            throw InputError(path.string() + ": unknown split '" + row[cl] + "'");
        if (std::find(c.parties.begin(), c.parties.end(), r.party) == c.parties.end()) c.parties.push_back(r.party);
        c.records.push_back(std::move(r));
    }
    c.validate();
    return c;
}

void save_probe_corpus(const ProbeCorpus& corpus, const std::filesystem::path& path) {
    std::string out = "statement,party,split\n";
    for (const auto& r : corpus.records)
        out += csv_line({r.statement, r.party, r.split == Split::train ? "train" : "holdout"});
    write_file(path, out);
}

LayerBand probing_layer_band(std::size_t num_layers) {
    if (num_layers < 2) throw std::invalid_argument("probing_layer_band: need at least 2 layers");
    // Integer forms of floor(0.5 L) and ceil(0.9 L).
    const std::size_t lo = num_layers / 2;
    const std::size_t hi = std::min((9 * num_layers + 9) / 10, num_layers - 1);
    return {std::min(lo, hi), hi};
}

EmbeddedCorpus embed_corpus(const Model& model, const Tokenizer& tokenizer, const ProbeCorpus& corpus,
                            std::size_t layer, int workers) {
    if (corpus.records.empty()) throw InputError("embed_corpus: corpus is empty");
    if (layer > model.config().num_layers) throw std::out_of_range("embed_corpus: layer out of range");
    EmbeddedCorpus e;
    e.layer = layer;
    e.vectors = Matrix(corpus.records.size(), model.config().model_dim);
    for (const auto& r : corpus.records) {
        e.parties.push_back(r.party);
        e.splits.push_back(r.split);
    }
    parallel_for(corpus.records.size(), workers, [&](std::size_t i) {
        std::vector<int> ids;
        try {
            ids = tokenizer.encode(corpus.records[i].statement);
        } catch (const InputError& err) {
            throw InputError("statement " + std::to_string(i) + ": " + err.what());
        }
        auto pooled = mean_pool(forward(model, ids), layer);
        std::copy(pooled.begin(), pooled.end(), e.vectors.row(i).begin());
    });
    return e;
}

double WeightedBce::loss(std::span<const double> w) const {
    double total = 0.0;
    for (std::size_t i = 0; i < x->rows; ++i) {
        double z = 0.0;
        auto row = x->row(i);
        for (std::size_t c = 0; c < row.size(); ++c) z += w[c] * row[c];
        total += y[i] ? w1 * softplus(-z) : softplus(z);
    }
    return total / static_cast<double>(x->rows);
}

std::vector<double> WeightedBce::gradient(std::span<const double> w) const {
    std::vector<double> g(x->cols, 0.0);
    for (std::size_t i = 0; i < x->rows; ++i) {
        double z = 0.0;
        auto row = x->row(i);
        for (std::size_t c = 0; c < row.size(); ++c) z += w[c] * row[c];
        const double s = sigmoid(z);
        const double dz = y[i] ? w1 * (s - 1.0) : s;
        for (std::size_t c = 0; c < row.size(); ++c) g[c] += dz * row[c];
    }
    for (auto& v : g) v /= static_cast<double>(x->rows);
    return g;
}

WeightedBce make_objective(const EmbeddedCorpus& embedded, const std::string& party, Split split, Matrix& rows_out) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < embedded.splits.size(); ++i)
        if (embedded.splits[i] == split) idx.push_back(i);
    rows_out = Matrix(idx.size(), embedded.vectors.cols);
    WeightedBce obj;
    std::size_t pos = 0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
        auto src = embedded.vectors.row(idx[r]);
        std::copy(src.begin(), src.end(), rows_out.row(r).begin());
        const int label = embedded.parties[idx[r]] == party ? 1 : 0;
        obj.y.push_back(label);
        pos += static_cast<std::size_t>(label);
    }
    obj.x = &rows_out;
    const std::size_t neg = idx.size() - pos;
    obj.w1 = pos > 0 ? static_cast<double>(neg) / static_cast<double>(pos) : 1.0;
    return obj;
}

Probe train_probe(const EmbeddedCorpus& embedded, const std::string& party, const ProbeHyperparams& hyper) {
    Matrix rows;
    WeightedBce obj = make_objective(embedded, party, Split::train, rows);
    const auto positives = std::count(obj.y.begin(), obj.y.end(), 1);
    if (positives == 0 || positives == static_cast<long>(obj.y.size()))
        throw InputError("train_probe: party '" + party + "' has single-class training data");

    std::vector<double> w(rows.cols, 0.0);
    Probe probe;
    probe.party = party;
    probe.layer = embedded.layer;
    probe.positive_weight = obj.w1;
    probe.hyper = hyper;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        const double l = obj.loss(w);
        if (!std::isfinite(l))
            throw std::runtime_error("train_probe: loss diverged for party '" + party +
                                     "'; try a lower learning rate");
        probe.loss_history.push_back(l);
        auto g = obj.gradient(w);
        for (std::size_t c = 0; c < w.size(); ++c) w[c] -= hyper.learning_rate * g[c];
    }
    probe.final_loss = obj.loss(w);
    if (!std::isfinite(probe.final_loss))
        throw std::runtime_error("train_probe: loss diverged for party '" + party + "'; try a lower learning rate");
    probe.loss_history.push_back(probe.final_loss);
    for (std::size_t i = 1; i < probe.loss_history.size(); ++i) {
        if (probe.loss_history[i] > probe.loss_history[i - 1] * (1.0 + 1e-12)) {
            log_warn("train_probe: loss increased at epoch " + std::to_string(i) + " for party '" + party + "'");
            break;
        }
    }
    probe.weight.assign(w.begin(), w.end());
    return probe;
}

ProbeMetrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
    ProbeMetrics m;
    m.tp = tp;
    m.fp = fp;
    m.tn = tn;
    m.fn = fn;
    if (tp + fp + fn == 0) {
        // No positives anywhere and none predicted: perfect agreement.
        m.precision = m.recall = m.f1 = 1.0;
        return m;
    }
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    return m;
}

ProbeMetrics evaluate_probe(const Probe& probe, const EmbeddedCorpus& embedded) {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0, n = 0;
    for (std::size_t i = 0; i < embedded.splits.size(); ++i) {
        if (embedded.splits[i] != Split::holdout) continue;
        ++n;
        const bool actual = embedded.parties[i] == probe.party;
        const bool predicted = probe.logit(embedded.vectors.row(i)) > 0.0;
        if (actual && predicted) ++tp;
        else if (!actual && predicted) ++fp;
        else if (actual) ++fn;
        else ++tn;
    }
    if (n == 0) throw InputError("evaluate_probe: holdout split is empty");
    return metrics_from_counts(tp, fp, tn, fn);
}

std::string probe_to_json(const Probe& probe, const std::string& meta_json) {
    json j;
    j["party"] = probe.party;
    j["layer"] = probe.layer;
    j["weight_f32_b64"] = base64_encode(probe.weight);
    j["dim"] = probe.weight.size();
    j["positive_weight"] = probe.positive_weight;
    j["training"] = {{"epochs", probe.hyper.epochs},
                     {"learning_rate", probe.hyper.learning_rate},
                     {"seed", probe.hyper.seed},
                     {"final_loss", probe.final_loss},
                     {"optimizer", "full-batch gradient descent, zero init"}};
    j["meta"] = json::parse(meta_json);
    return j.dump(2) + "\n";
}

Probe probe_from_json(const std::string& text) {
    try {
        json j = json::parse(text);
        Probe p;
        p.party = j.at("party").get<std::string>();
        p.layer = j.at("layer").get<std::size_t>();
        p.weight = base64_decode_floats(j.at("weight_f32_b64").get<std::string>());
        if (p.weight.size() != j.at("dim").get<std::size_t>()) throw InputError("probe: weight length mismatch");
        p.positive_weight = j.at("positive_weight").get<double>();
        const auto& t = j.at("training");
        p.hyper.epochs = t.at("epochs").get<std::size_t>();
        p.hyper.learning_rate = t.at("learning_rate").get<double>();
        p.hyper.seed = t.at("seed").get<std::uint64_t>();
        p.final_loss = t.at("final_loss").get<double>();
        return p;
    } catch (const json::exception& e) {
        throw InputError(std::string("probe artifact: ") + e.what());
    }
}

}  // namespace mf

#include "mf/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "json.hpp"
#include "mf/util.hpp"

namespace mf {

using json = nlohmann::json;

namespace {

constexpr float kNormEps = 1e-5f;
constexpr char kMagic[8] = {'M', 'F', 'W', 'E', 'I', 'G', 'H', 'T'};

std::string dims(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Human-readable role of a container tensor, used in load errors.
std::string describe(const std::string& name) {
    if (name == "embed") return "token embeddings";
    if (name == "unembed") return "E (unembedding)";
    if (name == "pos_embed") return "positional embeddings";
    if (name == "final_norm") return "final norm";
    if (name.rfind("layer.", 0) == 0) {
        auto dot = name.find('.', 6);
        std::string l = name.substr(6, dot - 6);
        std::string part = name.substr(dot + 1);
        if (part == "wk") return "W_K layer " + l;
        if (part == "wv") return "W_V layer " + l;
        if (part == "attn.q") return "attention W_Q layer " + l;
        if (part == "attn.k") return "attention W_K layer " + l;
        if (part == "attn.v") return "attention W_V layer " + l;
        if (part == "attn.o") return "attention W_O layer " + l;
        if (part == "attn_norm") return "attention norm layer " + l;
        if (part == "mlp_norm") return "MLP norm layer " + l;
    }
    return name;
}

void check_matrix(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
    if (m.rows != rows || m.cols != cols || m.data.size() != rows * cols)
        throw InputError("tensor " + name + " (" + describe(name) + "): expected shape " + dims({rows, cols}) +
                         ", got " + dims({m.rows, m.cols}));
    if (!all_finite(m.data)) throw InputError("tensor " + name + " (" + describe(name) + ") contains non-finite values");
}

void check_vector(const Vec& v, std::size_t n, const std::string& name) {
    if (v.size() != n)
        throw InputError("tensor " + name + " (" + describe(name) + "): expected shape " + dims({n}) + ", got " +
                         dims({v.size()}));
    if (!all_finite(v)) throw InputError("tensor " + name + " (" + describe(name) + ") contains non-finite values");
}

void rms_norm(std::span<const float> x, const Vec& gain, std::span<float> out) {
    float ss = 0.0f;
    for (float v : x) ss += v * v;
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + kNormEps);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

struct LayerRecord {
    Matrix attn_out, mlp_in, mlp_out, coeffs;
};

// One pre-norm block over every position: h = x + attn(norm(x)); x' = h + mlp(norm(h)).
Matrix run_layer(const Model& model, std::size_t l, const Matrix& x, LayerRecord* record) {
    const auto& cfg = model.config();
    const auto& w = model.layer(l);
    const std::size_t seq = x.rows;
    const std::size_t d = cfg.model_dim;
    const std::size_t nh = cfg.num_heads;
    const std::size_t hd = cfg.head_dim();
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    Matrix normed(seq, d);
    for (std::size_t i = 0; i < seq; ++i) rms_norm(x.row(i), w.attn_norm, normed.row(i));
    Matrix q(seq, d), k(seq, d), v(seq, d);
    for (std::size_t i = 0; i < seq; ++i) {
        auto qi = matvec(w.wq, normed.row(i));
        auto ki = matvec(w.wk, normed.row(i));
        auto vi = matvec(w.wv, normed.row(i));
        std::copy(qi.begin(), qi.end(), q.row(i).begin());
        std::copy(ki.begin(), ki.end(), k.row(i).begin());
        std::copy(vi.begin(), vi.end(), v.row(i).begin());
    }

    Matrix attn_out(seq, d);
    Vec scores(seq);
    Vec mixed(d);
    for (std::size_t i = 0; i < seq; ++i) {
        std::fill(mixed.begin(), mixed.end(), 0.0f);
        for (std::size_t h = 0; h < nh; ++h) {
            const std::size_t off = h * hd;
            float max_s = -INFINITY;
            for (std::size_t j = 0; j <= i; ++j) {
                float s = 0.0f;
                for (std::size_t t = 0; t < hd; ++t) s += q(i, off + t) * k(j, off + t);
                scores[j] = s * scale;
                max_s = std::max(max_s, scores[j]);
            }
            float denom = 0.0f;
            for (std::size_t j = 0; j <= i; ++j) {
                scores[j] = std::exp(scores[j] - max_s);
                denom += scores[j];
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const float p = scores[j] / denom;
                for (std::size_t t = 0; t < hd; ++t) mixed[off + t] += p * v(j, off + t);
            }
        }
        auto o = matvec(w.wo, mixed);
        std::copy(o.begin(), o.end(), attn_out.row(i).begin());
    }

    Matrix next(seq, d);
    Matrix mlp_in(seq, d), mlp_out(seq, d), coeffs(seq, cfg.mlp_dim);
    Vec hidden(d);
    for (std::size_t i = 0; i < seq; ++i) {
        for (std::size_t t = 0; t < d; ++t) hidden[t] = x(i, t) + attn_out(i, t);
        rms_norm(hidden, w.mlp_norm, mlp_in.row(i));
        auto pre = matvec(w.mlp_key, mlp_in.row(i));
        for (std::size_t n = 0; n < cfg.mlp_dim; ++n) coeffs(i, n) = model.activation(pre[n]);
        auto out = matvec(w.mlp_value, coeffs.row(i));
        for (std::size_t t = 0; t < d; ++t) {
            mlp_out(i, t) = out[t];
            next(i, t) = hidden[t] + out[t];
        }
    }
    if (record != nullptr) {
        record->attn_out = std::move(attn_out);
        record->mlp_in = std::move(mlp_in);
        record->mlp_out = std::move(mlp_out);
        record->coeffs = std::move(coeffs);
    }
    return next;
}

Vec final_logits(const Model& model, std::span<const float> last) {
    Vec normed(last.size());
    rms_norm(last, model.weights().final_norm, normed);
    return matvec(model.weights().unembed, normed);
}

json config_to_json(const ModelConfig& c) {
    return json{{"num_layers", c.num_layers},   {"model_dim", c.model_dim},
                {"mlp_dim", c.mlp_dim},         {"num_heads", c.num_heads},
                {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
                {"activation", c.activation == Activation::gelu ? "gelu" : "silu"}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.mlp_dim = j.at("mlp_dim").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    std::string act = j.value("activation", "gelu");
    if (act == "gelu")
        c.activation = Activation::gelu;
    else if (act == "silu")
        c.activation = Activation::silu;
    else
        throw InputError("unknown activation kind: " + act);
    return c;
}

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big)
        return ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
    return v;
}

}  // namespace

void ModelConfig::validate() const {
    if (num_layers == 0 || model_dim == 0 || mlp_dim == 0 || num_heads == 0 || vocab_size == 0 || max_seq_len == 0)
        throw InputError("model config: all dimensions must be >= 1");
    if (model_dim % num_heads != 0) throw InputError("model config: model_dim must be divisible by num_heads");
    if (mlp_dim < model_dim) throw InputError("model config: mlp_dim must be >= model_dim");
}

ModelWeights zero_weights(const ModelConfig& c) {
    c.validate();
    ModelWeights w;
    w.embed = Matrix(c.vocab_size, c.model_dim);
    w.pos_embed = Matrix(c.max_seq_len, c.model_dim);
    w.unembed = Matrix(c.vocab_size, c.model_dim);
    w.final_norm = Vec(c.model_dim, 1.0f);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        LayerWeights lw;
        lw.attn_norm = Vec(c.model_dim, 1.0f);
        lw.mlp_norm = Vec(c.model_dim, 1.0f);
        lw.wq = Matrix(c.model_dim, c.model_dim);
        lw.wk = Matrix(c.model_dim, c.model_dim);
        lw.wv = Matrix(c.model_dim, c.model_dim);
        lw.wo = Matrix(c.model_dim, c.model_dim);
        lw.mlp_key = Matrix(c.mlp_dim, c.model_dim);
        lw.mlp_value = Matrix(c.model_dim, c.mlp_dim);
        w.layers.push_back(std::move(lw));
    }
    return w;
}

Model::Model(ModelConfig config, ModelWeights weights) : config_(config), weights_(std::move(weights)) {
    config_.validate();
    const auto d = config_.model_dim;
    check_matrix(weights_.embed, config_.vocab_size, d, "embed");
    check_matrix(weights_.pos_embed, config_.max_seq_len, d, "pos_embed");
    check_matrix(weights_.unembed, config_.vocab_size, d, "unembed");
    check_vector(weights_.final_norm, d, "final_norm");
    if (weights_.layers.size() != config_.num_layers)
        throw InputError("expected " + std::to_string(config_.num_layers) + " layers, got " +
                         std::to_string(weights_.layers.size()));
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
        const auto& lw = weights_.layers[l];
        const std::string p = "layer." + std::to_string(l) + ".";
        check_vector(lw.attn_norm, d, p + "attn_norm");
        check_vector(lw.mlp_norm, d, p + "mlp_norm");
        check_matrix(lw.wq, d, d, p + "attn.q");
        check_matrix(lw.wk, d, d, p + "attn.k");
        check_matrix(lw.wv, d, d, p + "attn.v");
        check_matrix(lw.wo, d, d, p + "attn.o");
        check_matrix(lw.mlp_key, config_.mlp_dim, d, p + "wk");
        check_matrix(lw.mlp_value, d, config_.mlp_dim, p + "wv");
    }
}

Vec Model::value_vector(std::size_t layer, std::size_t neuron) const {
    if (layer >= config_.num_layers || neuron >= config_.mlp_dim)
        throw std::out_of_range("value_vector: layer or neuron out of range");
    return weights_.layers[layer].mlp_value.column(neuron);
}

float Model::activation(float x) const {
    if (config_.activation == Activation::gelu) return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f));
    return x / (1.0f + std::exp(-x));
}

ForwardTrace forward(const Model& model, const std::vector<int>& token_ids, const ResidualHook& hook) {
    const auto& cfg = model.config();
    if (token_ids.empty()) throw InputError("forward: empty token sequence");
    if (token_ids.size() > cfg.max_seq_len)
        throw InputError("forward: sequence length " + std::to_string(token_ids.size()) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
    ForwardTrace trace;
    trace.token_ids = token_ids;
    const std::size_t seq = token_ids.size();
    Matrix x(seq, cfg.model_dim);
    for (std::size_t i = 0; i < seq; ++i) {
        const int t = token_ids[i];
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
            throw InputError("forward: token id " + std::to_string(t) + " out of range");
        auto e = model.weights().embed.row(static_cast<std::size_t>(t));
        auto p = model.weights().pos_embed.row(i);
        for (std::size_t c = 0; c < cfg.model_dim; ++c) x(i, c) = e[c] + p[c];
    }
    trace.residuals.push_back(x);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        LayerRecord rec;
        Matrix next = run_layer(model, l, trace.residuals.back(), &rec);
        if (hook) hook(l, next);
        trace.attn_out.push_back(std::move(rec.attn_out));
        trace.mlp_in.push_back(std::move(rec.mlp_in));
        trace.mlp_out.push_back(std::move(rec.mlp_out));
        trace.mlp_coeffs.push_back(std::move(rec.coeffs));
        trace.residuals.push_back(std::move(next));
    }
    trace.final_logits = final_logits(model, trace.residuals.back().row(seq - 1));
    return trace;
}

std::vector<SubUpdate> mlp_sub_updates(const Model& model, std::size_t layer, std::span<const float> mlp_input) {
    const auto& cfg = model.config();
    if (layer >= cfg.num_layers) throw std::out_of_range("mlp_sub_updates: layer out of range");
    if (mlp_input.size() != cfg.model_dim) throw std::invalid_argument("mlp_sub_updates: input dimension mismatch");
    if (!all_finite(mlp_input)) throw std::invalid_argument("mlp_sub_updates: non-finite input");
    const auto& w = model.layer(layer);
    std::vector<SubUpdate> out;
    out.reserve(cfg.mlp_dim);
    for (std::size_t i = 0; i < cfg.mlp_dim; ++i) {
        const float m = model.activation(dot(w.mlp_key.row(i), mlp_input));
        out.push_back({m, w.mlp_value.column(i)});
    }
    return out;
}

Vec mlp_output(const Model& model, std::size_t layer, std::span<const float> mlp_input) {
    const auto& w = model.layer(layer);
    auto pre = matvec(w.mlp_key, mlp_input);
    for (auto& p : pre) p = model.activation(p);
    return matvec(w.mlp_value, pre);
}

std::vector<double> log_softmax(std::span<const float> logits) {
    double mx = -INFINITY;
    for (float v : logits) mx = std::max(mx, static_cast<double>(v));
    double s = 0.0;
    for (float v : logits) s += std::exp(static_cast<double>(v) - mx);
    const double lse = mx + std::log(s);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
    return out;
}

double sign_inversion_delta(const Model& model, const ForwardTrace& trace, std::size_t layer, std::size_t neuron,
                            int target_token, std::size_t position) {
    const auto& cfg = model.config();
    if (layer >= cfg.num_layers) throw std::out_of_range("sign_inversion_delta: layer out of range");
    if (neuron >= cfg.mlp_dim) throw std::out_of_range("sign_inversion_delta: neuron out of range");
    if (position >= trace.seq_len()) throw std::out_of_range("sign_inversion_delta: position beyond sequence");
    if (target_token < 0 || static_cast<std::size_t>(target_token) >= cfg.vocab_size)
        throw std::out_of_range("sign_inversion_delta: target token out of range");
    if (trace.mlp_coeffs.size() != cfg.num_layers || trace.final_logits.size() != cfg.vocab_size)
        throw std::invalid_argument("sign_inversion_delta: trace was not produced by this model");

    const float m = trace.mlp_coeffs[layer](position, neuron);
    if (m == 0.0f) return 0.0;

    Matrix x = trace.residuals[layer + 1];
    const auto& wv = model.layer(layer).mlp_value;
    for (std::size_t c = 0; c < cfg.model_dim; ++c) x(position, c) -= 2.0f * m * wv(c, neuron);
    for (std::size_t l = layer + 1; l < cfg.num_layers; ++l) x = run_layer(model, l, x, nullptr);
    const Vec edited = final_logits(model, x.row(x.rows - 1));

    const auto t = static_cast<std::size_t>(target_token);
    return log_softmax(trace.final_logits)[t] - log_softmax(edited)[t];
}

std::vector<double> next_token_distribution(const ForwardTrace& trace) {
    auto lp = log_softmax(trace.final_logits);
    for (auto& v : lp) v = std::exp(v);
    return lp;
}

Vec mean_pool(const ForwardTrace& trace, std::size_t layer) {
    if (layer >= trace.residuals.size()) throw std::out_of_range("mean_pool: layer out of range");
    const Matrix& r = trace.residuals[layer];
    Vec out(r.cols);
    for (std::size_t c = 0; c < r.cols; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < r.rows; ++i) s += r(i, c);
        out[c] = static_cast<float>(s / static_cast<double>(r.rows));
    }
    return out;
}

// ---- container -------------------------------------------------------------

void write_container(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                     const std::string& metadata_json) {
    json header = json::object();
    header["__metadata__"] = json::parse(metadata_json);
    std::size_t offset = 0;
    for (const auto& t : tensors) {
        std::size_t n = 1;
        for (auto s : t.shape) n *= s;
        if (n != t.values.size()) throw std::invalid_argument("write_container: shape/value mismatch for " + t.name);
        header[t.name] = json{{"shape", t.shape}, {"offset", offset}};
        offset += n * 4;
    }
    const std::string hdr = header.dump();
    std::string out;
    out.reserve(12 + hdr.size() + offset);
    out.append(kMagic, 8);
    std::uint32_t len = to_le(static_cast<std::uint32_t>(hdr.size()));
    out.append(reinterpret_cast<const char*>(&len), 4);
    out += hdr;
    for (const auto& t : tensors) {
        for (float v : t.values) {
            std::uint32_t u;
            std::memcpy(&u, &v, 4);
            u = to_le(u);
            out.append(reinterpret_cast<const char*>(&u), 4);
        }
    }
    write_file(path, out);
}

Container read_container(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    const std::string where = path.string() + ": ";
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw InputError(where + "corrupt header: missing MFWEIGHT magic");
    std::uint32_t len;
    std::memcpy(&len, bytes.data() + 8, 4);
    len = to_le(len);
    if (12ull + len > bytes.size()) throw InputError(where + "corrupt header: header length exceeds file size");
    json header;
    try {
        header = json::parse(bytes.substr(12, len));
    } catch (const json::exception& e) {
        throw InputError(where + "corrupt header: " + e.what());
    }
    if (!header.is_object()) throw InputError(where + "corrupt header: not a JSON object");
    const std::size_t payload = 12 + len;
    const std::size_t payload_size = bytes.size() - payload;
    Container c;
    c.metadata_json = header.contains("__metadata__") ? header["__metadata__"].dump() : "{}";
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__metadata__") continue;
        NamedTensor t;
        t.name = it.key();
        try {
            t.shape = it.value().at("shape").get<std::vector<std::size_t>>();
            const auto offset = it.value().at("offset").get<std::size_t>();
            std::size_t n = 1;
            for (auto s : t.shape) n *= s;
            if (offset % 4 != 0 || offset + n * 4 > payload_size)
                throw InputError(where + "tensor " + t.name + " (" + describe(t.name) + ") extends past payload");
            t.values.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                std::uint32_t u;
                std::memcpy(&u, bytes.data() + payload + offset + i * 4, 4);
                u = to_le(u);
                std::memcpy(&t.values[i], &u, 4);
            }
        } catch (const json::exception& e) {
            throw InputError(where + "corrupt header entry for " + t.name + ": " + e.what());
        }
        c.tensors.emplace(t.name, std::move(t));
    }
    return c;
}

void save_model(const Model& model, const std::filesystem::path& path, const std::string& metadata_json) {
    const auto& w = model.weights();
    std::vector<NamedTensor> ts;
    auto mat = [&](const std::string& name, const Matrix& m) { ts.push_back({name, {m.rows, m.cols}, m.data}); };
    auto vec = [&](const std::string& name, const Vec& v) { ts.push_back({name, {v.size()}, v}); };
    mat("embed", w.embed);
    mat("pos_embed", w.pos_embed);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        const auto& lw = w.layers[l];
        vec(p + "attn_norm", lw.attn_norm);
        mat(p + "attn.q", lw.wq);
        mat(p + "attn.k", lw.wk);
        mat(p + "attn.v", lw.wv);
        mat(p + "attn.o", lw.wo);
        vec(p + "mlp_norm", lw.mlp_norm);
        mat(p + "wk", lw.mlp_key);
        mat(p + "wv", lw.mlp_value);
    }
    vec("final_norm", w.final_norm);
    mat("unembed", w.unembed);
    json meta = json::parse(metadata_json);
    meta["model_config"] = config_to_json(model.config());
    write_container(path, ts, meta.dump());
}

Model load_model(const std::filesystem::path& path) {
    Container c = read_container(path);
    const std::string where = path.string() + ": ";
    json meta = json::parse(c.metadata_json);
    if (!meta.contains("model_config")) throw InputError(where + "corrupt header: missing model_config metadata");
    ModelConfig cfg;
    try {
        cfg = config_from_json(meta["model_config"]);
    } catch (const json::exception& e) {
        throw InputError(where + "corrupt header: model_config: " + e.what());
    }
    cfg.validate();

    auto take = [&](const std::string& name) -> const NamedTensor& {
        auto it = c.tensors.find(name);
        if (it == c.tensors.end()) throw InputError(where + "missing tensor " + name + " (" + describe(name) + ")");
        return it->second;
    };
    auto mat = [&](const std::string& name) {
        const auto& t = take(name);
        if (t.shape.size() != 2)
            throw InputError(where + "tensor " + name + " (" + describe(name) + ") must be 2-D, got " + dims(t.shape));
        Matrix m(t.shape[0], t.shape[1]);
        m.data = t.values;
        return m;
    };
    auto vec = [&](const std::string& name) {
        const auto& t = take(name);
        if (t.shape.size() != 1)
            throw InputError(where + "tensor " + name + " (" + describe(name) + ") must be 1-D, got " + dims(t.shape));
        return t.values;
    };
    ModelWeights w;
    w.embed = mat("embed");
    w.pos_embed = mat("pos_embed");
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        LayerWeights lw;
        lw.attn_norm = vec(p + "attn_norm");
        lw.wq = mat(p + "attn.q");
        lw.wk = mat(p + "attn.k");
        lw.wv = mat(p + "attn.v");
        lw.wo = mat(p + "attn.o");
        lw.mlp_norm = vec(p + "mlp_norm");
        lw.mlp_key = mat(p + "wk");
        lw.mlp_value = mat(p + "wv");
        w.layers.push_back(std::move(lw));
    }
    w.final_norm = vec("final_norm");
    w.unembed = mat("unembed");
    try {
        return Model(cfg, std::move(w));
    } catch (const InputError& e) {
        throw InputError(where + e.what());
    }
}

// ---- tokenizer -------------------------------------------------------------

Tokenizer::Tokenizer(std::map<std::string, int> vocab) : vocab_(std::move(vocab)) {
    id_to_surface_.assign(vocab_.size(), std::string());
    std::vector<bool> seen(vocab_.size(), false);
    for (const auto& [s, id] : vocab_) {
        if (s.empty()) throw InputError("tokenizer: empty surface string");
        if (s.find_first_of(" \t\n\r") != std::string::npos)
            throw InputError("tokenizer: surface string contains whitespace: '" + s + "'");
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size() || seen[static_cast<std::size_t>(id)])
            throw InputError("tokenizer: ids must be a permutation of 0..n-1 (bad id " + std::to_string(id) + ")");
        seen[static_cast<std::size_t>(id)] = true;
        id_to_surface_[static_cast<std::size_t>(id)] = s;
        max_len_ = std::max(max_len_, s.size());
    }
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw InputError(path.string() + ": tokenizer must be a JSON object");
    std::map<std::string, int> vocab;
    for (auto it = j.begin(); it != j.end(); ++it) vocab[it.key()] = it.value().get<int>();
    return Tokenizer(std::move(vocab));
}

void Tokenizer::save(const std::filesystem::path& path) const {
    json j = json::object();
    for (const auto& [s, id] : vocab_) j[s] = id;
    write_file(path, j.dump(1) + "\n");
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        std::size_t pos = i;
        while (pos < j) {
            bool matched = false;
            for (std::size_t len = std::min(max_len_, j - pos); len > 0; --len) {
                auto it = vocab_.find(text.substr(pos, len));
                if (it != vocab_.end()) {
                    ids.push_back(it->second);
                    pos += len;
                    matched = true;
                    break;
                }
            }
            if (!matched)
                throw InputError("tokenization failure: no vocabulary entry matches at '" + text.substr(pos, j - pos) +
                                 "'");
        }
        i = j;
    }
    return ids;
}

std::optional<int> Tokenizer::id(const std::string& surface) const {
    auto it = vocab_.find(surface);
    if (it == vocab_.end()) return std::nullopt;
    return it->second;
}

const std::string& Tokenizer::surface(int id) const { return id_to_surface_.at(static_cast<std::size_t>(id)); }

}  // namespace mf

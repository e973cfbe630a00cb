#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mf/tensor.hpp"

namespace mf {

enum class Activation { gelu, silu };

struct ModelConfig {
    std::size_t num_layers = 0;
    std::size_t model_dim = 0;
    std::size_t mlp_dim = 0;
    std::size_t num_heads = 0;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 0;
    Activation activation = Activation::gelu;

    // Throws InputError when dimensions are inconsistent.
    void validate() const;
    std::size_t head_dim() const { return model_dim / num_heads; }
};

struct LayerWeights {
    Vec attn_norm;  // d
    Matrix wq, wk, wv, wo;  // d x d each
    Vec mlp_norm;   // d
    Matrix mlp_key;    // W_K: d_mlp x d, rows are key vectors
    Matrix mlp_value;  // W_V: d x d_mlp, columns are value vectors
};

struct ModelWeights {
    Matrix embed;      // |V| x d
    Matrix pos_embed;  // max_seq_len x d
    std::vector<LayerWeights> layers;
    Vec final_norm;    // d
    Matrix unembed;    // E: |V| x d
};

// Allocates zero-filled weights (norm gains set to one) for a config.
ModelWeights zero_weights(const ModelConfig& config);

// Immutable after construction; safe to share across threads.
class Model {
public:
    Model(ModelConfig config, ModelWeights weights);

    const ModelConfig& config() const { return config_; }
    const ModelWeights& weights() const { return weights_; }
    const LayerWeights& layer(std::size_t l) const { return weights_.layers.at(l); }

    // Value vector v_i^l (column i of W_V^l).
    Vec value_vector(std::size_t layer, std::size_t neuron) const;
    float activation(float x) const;

private:
    ModelConfig config_;
    ModelWeights weights_;
};

struct ForwardTrace {
    std::vector<int> token_ids;
    std::vector<Matrix> residuals;    // L+1 entries, each seq x d
    std::vector<Matrix> attn_out;     // L entries, seq x d
    std::vector<Matrix> mlp_in;       // L entries, seq x d (normalized MLP input)
    std::vector<Matrix> mlp_out;      // L entries, seq x d
    std::vector<Matrix> mlp_coeffs;   // L entries, seq x d_mlp, post-nonlinearity
    Vec final_logits;                 // |V| at last position

    std::size_t seq_len() const { return token_ids.size(); }
};

// Called after layer `layer` has written residuals[layer + 1]; may edit it.
using ResidualHook = std::function<void(std::size_t layer, Matrix& residual)>;

ForwardTrace forward(const Model& model, const std::vector<int>& token_ids, const ResidualHook& hook = {});

struct SubUpdate {
    float coefficient;  // m_i
    Vec value;          // v_i
};

// Decomposes MLP^layer(mlp_input) into d_mlp scaled value vectors. mlp_input is
// the (already normalized) vector the MLP consumes.
std::vector<SubUpdate> mlp_sub_updates(const Model& model, std::size_t layer, std::span<const float> mlp_input);

// Direct W_V f(W_K x).
Vec mlp_output(const Model& model, std::size_t layer, std::span<const float> mlp_input);

// log p(target | original) - log p(target | edited), where the edited run
// subtracts 2 m v from the residual after `layer` at `position` and recomputes
// every downstream layer. Probabilities are read at the final position.
double sign_inversion_delta(const Model& model, const ForwardTrace& trace, std::size_t layer, std::size_t neuron,
                            int target_token, std::size_t position);

// Softmax of the final logits (double precision).
std::vector<double> next_token_distribution(const ForwardTrace& trace);
std::vector<double> log_softmax(std::span<const float> logits);

// Mean of residuals[layer] over all positions.
Vec mean_pool(const ForwardTrace& trace, std::size_t layer);

// ---- weights container -------------------------------------------------------

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

// "MFWEIGHT" | u32 LE header length | JSON header | float32 LE payload.
void write_container(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                     const std::string& metadata_json = "{}");

struct Container {
    std::map<std::string, NamedTensor> tensors;
    std::string metadata_json;
};

Container read_container(const std::filesystem::path& path);

void save_model(const Model& model, const std::filesystem::path& path, const std::string& metadata_json = "{}");
Model load_model(const std::filesystem::path& path);

// ---- tokenizer -------------------------------------------------------------

// Whitespace pre-tokenization followed by greedy longest-match against the vocabulary.
class Tokenizer {
public:
    Tokenizer() = default;
    explicit Tokenizer(std::map<std::string, int> vocab);

    static Tokenizer load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::vector<int> encode(const std::string& text) const;
    std::optional<int> id(const std::string& surface) const;
    const std::string& surface(int id) const;
    std::size_t size() const { return id_to_surface_.size(); }
    const std::map<std::string, int>& vocab() const { return vocab_; }

private:
    std::map<std::string, int> vocab_;
    std::vector<std::string> id_to_surface_;
    std::size_t max_len_ = 0;
};

}  // namespace mf

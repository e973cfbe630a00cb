#pragma once

#include <filesystem>
#include <string>

#include "mf/model.hpp"
#include "mf/util.hpp"

namespace mf::test {

// Gaussian weights with std `scale / sqrt(fan_in)`, unit norm gains.
inline Model random_model(const ModelConfig& cfg, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    ModelWeights w = zero_weights(cfg);
    auto fill = [&](Matrix& m) {
        const double s = scale / std::sqrt(static_cast<double>(m.cols));
        for (auto& x : m.data) x = static_cast<float>(rng.normal() * s);
    };
    fill(w.embed);
    fill(w.pos_embed);
    fill(w.unembed);
    for (auto& l : w.layers) {
        fill(l.wq);
        fill(l.wk);
        fill(l.wv);
        fill(l.wo);
        fill(l.mlp_key);
        fill(l.mlp_value);
        for (auto& g : l.attn_norm) g = static_cast<float>(1.0 + 0.1 * rng.normal());
        for (auto& g : l.mlp_norm) g = static_cast<float>(1.0 + 0.1 * rng.normal());
    }
    return Model(cfg, std::move(w));
}

inline ModelConfig small_config(std::size_t L = 2, std::size_t d = 16, std::size_t dm = 32, std::size_t V = 24) {
    ModelConfig c;
    c.num_layers = L;
    c.model_dim = d;
    c.mlp_dim = dm;
    c.num_heads = 2;
    c.vocab_size = V;
    c.max_seq_len = 16;
    return c;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("mf_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace mf::test

// SPDX-License-Identifier: Apache-2.0

#ifndef TPO_CONFIG_HPP
#define TPO_CONFIG_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace tpo {

using json = nlohmann::json;

// Desk-scale backbone dimensions. The defaults are the smallest setting
// where routing and grounding are reliably learnable in minutes on a CPU.
struct BackboneConfig {
    int vocab_size = 512;
    int c_dim = 96;
    int num_lm_layers = 2;
    int num_heads = 4;
    int num_connector_queries = 16;  // one per patch keeps location recoverable
    int patch_size = 8;
    int frame_size = 32;   // H = W
    int t_max = 16;
    int ctx_max = 352;
    int lora_rank = 16;
    double lora_alpha = 32.0;
    int k_mem = 4;         // memory bank capacity
    bool smooth_activations = true;  // GELU everywhere; ReLU where the paper says so otherwise
    uint64_t seed = 0;

    int patches_per_side() const { return frame_size / patch_size; }
    int patches_per_frame() const { return patches_per_side() * patches_per_side(); }
    int patch_dim() const { return patch_size * patch_size * 3; }

    void validate() const {
        if (c_dim % num_heads != 0) throw std::invalid_argument("c_dim must divide by num_heads");
        if (vocab_size <= 16) throw std::invalid_argument("vocab_size too small for special tokens");
        if (frame_size % patch_size != 0) throw std::invalid_argument("frame_size % patch_size != 0");
        if (t_max < 1 || num_connector_queries < 1) throw std::invalid_argument("bad config");
    }
};

inline void to_json(json& j, const BackboneConfig& c) {
    j = json{{"vocab_size", c.vocab_size},
             {"c_dim", c.c_dim},
             {"num_lm_layers", c.num_lm_layers},
             {"num_heads", c.num_heads},
             {"num_connector_queries", c.num_connector_queries},
             {"patch_size", c.patch_size},
             {"frame_size", c.frame_size},
             {"t_max", c.t_max},
             {"ctx_max", c.ctx_max},
             {"lora_rank", c.lora_rank},
             {"lora_alpha", c.lora_alpha},
             {"k_mem", c.k_mem},
             {"smooth_activations", c.smooth_activations},
             {"seed", c.seed}};
}

inline void from_json(const json& j, BackboneConfig& c) {
    BackboneConfig d;
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.c_dim = j.value("c_dim", d.c_dim);
    c.num_lm_layers = j.value("num_lm_layers", d.num_lm_layers);
    c.num_heads = j.value("num_heads", d.num_heads);
    c.num_connector_queries = j.value("num_connector_queries", d.num_connector_queries);
    c.patch_size = j.value("patch_size", d.patch_size);
    c.frame_size = j.value("frame_size", d.frame_size);
    c.t_max = j.value("t_max", d.t_max);
    c.ctx_max = j.value("ctx_max", d.ctx_max);
    c.lora_rank = j.value("lora_rank", d.lora_rank);
    c.lora_alpha = j.value("lora_alpha", d.lora_alpha);
    c.k_mem = j.value("k_mem", d.k_mem);
    c.smooth_activations = j.value("smooth_activations", d.smooth_activations);
    c.seed = j.value("seed", d.seed);
}

// FNV-1a over the canonical (sorted-key) JSON dump; stable under key
// reordering in the source file.
inline uint64_t content_hash(const json& j) {
    const std::string s = j.dump();  // nlohmann objects iterate in sorted key order
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace tpo

#endif  // TPO_CONFIG_HPP

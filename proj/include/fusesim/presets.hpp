// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fusesim/config.hpp"

namespace fusesim {

// Named configurations used throughout the test and CLI surface.
//
//   llama31_8b / llama31_70b     full-size decoder configurations
//   llama31_8b-toy               reduced decoder for fast oracle checks
//                                (not a published configuration)
//   stacked_linear_2k/4k/8k      square deep-linear stacks, 32 layers
//   h100_sxm                     hardware model of a single H100 SXM

inline ModelConfig model_preset(const std::string& name) {
    ModelConfig m;
    if (name == "llama31_8b") {
        m.kind = ModelKind::LlamaDecoder;
        m.layers = 32;
        m.d_model = 4096;
        m.d_inter = 14336;
        m.d_head = 128;
        m.n_q_heads = 32;
        m.n_kv_heads = 8;
        m.vocab_size = 128256;
    } else if (name == "llama31_70b") {
        m.kind = ModelKind::LlamaDecoder;
        m.layers = 80;
        m.d_model = 8192;
        m.d_inter = 28672;
        m.d_head = 128;
        m.n_q_heads = 64;
        m.n_kv_heads = 8;
        m.vocab_size = 128256;
    } else if (name == "llama31_8b-toy") {
        m.kind = ModelKind::LlamaDecoder;
        m.layers = 4;
        m.d_model = 256;
        m.d_inter = 896;
        m.d_head = 64;
        m.n_q_heads = 4;
        m.n_kv_heads = 2;
        m.vocab_size = 512;
    } else if (name == "stacked_linear_2k" || name == "stacked_linear_4k" ||
               name == "stacked_linear_8k") {
        m.kind = ModelKind::StackedLinear;
        m.layers = 32;
        m.d_model = name == "stacked_linear_2k" ? 2048
                  : name == "stacked_linear_4k" ? 4096
                                                : 8192;
    } else {
        throw ValidationError("unknown model preset: " + name);
    }
    m.validate();
    return m;
}

inline HardwareConfig hardware_preset(const std::string& name) {
    if (name != "h100_sxm") throw ValidationError("unknown hardware preset: " + name);
    HardwareConfig h;  // defaults are the H100 SXM numbers
    h.validate();
    return h;
}

inline bool is_model_preset(const std::string& name) {
    static const std::vector<std::string> names = {
        "llama31_8b", "llama31_70b", "llama31_8b-toy",
        "stacked_linear_2k", "stacked_linear_4k", "stacked_linear_8k"};
    for (const auto& n : names)
        if (n == name) return true;
    return false;
}

inline bool is_hardware_preset(const std::string& name) { return name == "h100_sxm"; }

// Either-of lookup matching the single-name preset interface.
struct PresetResult {
    std::optional<ModelConfig> model;
    std::optional<HardwareConfig> hardware;
};

inline PresetResult preset(const std::string& name) {
    PresetResult r;
    if (is_model_preset(name)) {
        r.model = model_preset(name);
    } else if (is_hardware_preset(name)) {
        r.hardware = hardware_preset(name);
    } else {
        throw ValidationError("unknown preset: " + name);
    }
    return r;
}

}  // namespace fusesim

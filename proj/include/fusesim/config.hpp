// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fusesim/types.hpp"

namespace fusesim {

enum class ModelKind : uint8_t { StackedLinear, LlamaDecoder };

inline const char* model_kind_name(ModelKind k) {
    return k == ModelKind::StackedLinear ? "stacked_linear" : "llama_decoder";
}

inline ModelKind model_kind_from_name(const std::string& s) {
    if (s == "stacked_linear") return ModelKind::StackedLinear;
    if (s == "llama_decoder") return ModelKind::LlamaDecoder;
    throw ParseError("unknown model kind: " + s);
}

struct QuantConfig {
    int32_t bits = 4;
    int32_t group_size = 128;
    std::string scheme = "weight_only_affine";

    friend bool operator==(const QuantConfig&, const QuantConfig&) = default;

    void validate() const {
        if (bits != 4) throw ValidationError("quant: only 4-bit codes are supported");
        if (group_size <= 0) throw ValidationError("quant: group_size must be positive");
        if (scheme != "weight_only_affine")
            throw ValidationError("quant: unknown scheme '" + scheme + "'");
    }
};

struct ModelConfig {
    ModelKind kind = ModelKind::LlamaDecoder;
    int64_t layers = 0;
    int64_t d_model = 0;
    int64_t d_inter = 0;
    int64_t d_head = 0;
    int64_t n_q_heads = 0;
    int64_t n_kv_heads = 0;
    int64_t vocab_size = 0;
    double rope_theta = 500000.0;
    double rmsnorm_eps = 1e-5;
    DType dtype = DType::BF16;
    std::optional<QuantConfig> quant;
    int64_t batch = 1;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

    void validate() const {
        if (layers < 0) throw ValidationError("model: layers must be >= 0");
        if (d_model <= 0) throw ValidationError("model: d_model must be positive");
        if (batch < 1 || batch > 4) throw ValidationError("model: batch must be in [1,4]");
        if (kind == ModelKind::StackedLinear) return;  // other fields ignored-but-valid
        if (d_inter <= 0) throw ValidationError("model: d_inter must be positive");
        if (d_head <= 0 || d_head % 2 != 0)
            throw ValidationError("model: d_head must be positive and even");
        if (n_q_heads <= 0 || n_kv_heads <= 0)
            throw ValidationError("model: head counts must be positive");
        if (n_q_heads % n_kv_heads != 0)
            throw ValidationError("model: GQA grouping requires n_q_heads mod n_kv_heads == 0");
        if (d_model != n_q_heads * d_head)
            throw ValidationError("model: d_model must equal n_q_heads * d_head");
        if (vocab_size <= 0) throw ValidationError("model: vocab_size must be positive");
        if (quant) {
            quant->validate();
            if (d_model % quant->group_size != 0)
                throw ValidationError("quant: group_size must divide every quantized row length");
        }
    }

    int64_t qkv_rows() const { return n_q_heads * d_head + 2 * n_kv_heads * d_head; }
    int64_t q_group() const { return n_q_heads / n_kv_heads; }
};

struct HardwareConfig {
    int64_t num_sms = 132;
    uint64_t shared_mem_per_sm = 228ull * 1024;
    uint64_t registers_per_sm = 256ull * 1024;
    uint64_t hbm_capacity = 80ull * 1000 * 1000 * 1000;
    double peak_bandwidth = 3.35e12;        // bytes/s
    double kernel_launch_overhead = 8e-6;   // s, calibrated
    double barrier_latency = 3e-7;          // s
    double compute_throughput_per_sm = 8e10;  // elements/s, calibrated

    friend bool operator==(const HardwareConfig&, const HardwareConfig&) = default;

    void validate() const {
        if (num_sms <= 0) throw ValidationError("hardware: num_sms must be positive");
        if (shared_mem_per_sm == 0) throw ValidationError("hardware: shared_mem_per_sm must be positive");
        if (registers_per_sm == 0) throw ValidationError("hardware: registers_per_sm must be positive");
        if (hbm_capacity == 0) throw ValidationError("hardware: hbm_capacity must be positive");
        if (peak_bandwidth <= 0) throw ValidationError("hardware: peak_bandwidth must be positive");
        if (kernel_launch_overhead < 0 || barrier_latency < 0)
            throw ValidationError("hardware: latencies must be >= 0");
        if (compute_throughput_per_sm <= 0)
            throw ValidationError("hardware: compute_throughput_per_sm must be positive");
    }
};

// Shared memory reserved outside the pipeline stages: barrier/metadata scratch
// plus the replicated input vector and the f32 partial-output accumulator.
inline constexpr uint64_t kFixedSharedScratch = 4096;

inline uint64_t shared_footprint(uint64_t stage_size, int64_t depth, const ModelConfig& m) {
    uint64_t per_row = m.d_model * (dtype_bytes(m.dtype) + 4);
    return stage_size * static_cast<uint64_t>(depth) + kFixedSharedScratch +
           static_cast<uint64_t>(m.batch) * per_row;
}

struct PipelineConfig {
    uint64_t stage_size = 64ull * 1024;
    int64_t depth = 3;
    int64_t consumer_warps = 8;

    friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;

    void validate(const HardwareConfig& hw) const {
        if (stage_size == 0) throw ValidationError("pipeline: stage_size must be positive");
        if (depth < 2)
            throw ValidationError("pipeline: depth must be >= 2 (two concurrent buffers minimum)");
        if (consumer_warps < 1) throw ValidationError("pipeline: consumer_warps must be >= 1");
        if (stage_size * static_cast<uint64_t>(depth) + kFixedSharedScratch > hw.shared_mem_per_sm)
            throw ValidationError("pipeline: stages exceed shared memory per SM");
    }
};

struct RunConfig {
    ModelConfig model;
    HardwareConfig hardware;
    PipelineConfig pipeline;
    RunMode mode = RunMode::FusedOverlap;
    int64_t seq_len = 0;
    uint64_t seed = 0;

    void validate() const {
        model.validate();
        hardware.validate();
        pipeline.validate(hardware);
        if (seq_len < 0) throw ValidationError("run: seq_len must be >= 0");
        // Full footprint including the replicated input depends on the model.
        if (shared_footprint(pipeline.stage_size, pipeline.depth, model) > hardware.shared_mem_per_sm)
            throw ValidationError("pipeline: footprint exceeds shared memory for this model");
    }
};

// ---------------------------------------------------------------------------
// Structured-text config files: [model] / [hardware] / [pipeline] / [run]
// sections with `key = value` lines, '#' comments. Units are bytes, seconds
// and plain counts throughout.
// ---------------------------------------------------------------------------
namespace detail {

using Section = std::map<std::string, std::string>;
using IniDoc = std::map<std::string, Section>;

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline IniDoc parse_ini(const std::string& text) {
    IniDoc doc;
    std::string section;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ParseError("config line " + std::to_string(lineno) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            doc[section];
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (section.empty())
            throw ParseError("config line " + std::to_string(lineno) + ": key outside any section");
        if (key.empty()) throw ParseError("config line " + std::to_string(lineno) + ": empty key");
        doc[section][key] = val;
    }
    return doc;
}

inline int64_t to_count(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ParseError("config: field '" + key + "' is not an integer: " + v);
    }
}

inline uint64_t to_bytes(const std::string& v, const std::string& key) {
    int64_t x = to_count(v, key);
    if (x < 0) throw ParseError("config: field '" + key + "' must be non-negative");
    return static_cast<uint64_t>(x);
}

inline double to_real(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ParseError("config: field '" + key + "' is not a number: " + v);
    }
}

inline std::string real_str(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

}  // namespace detail

inline std::string serialize(const RunConfig& rc) {
    using detail::real_str;
    std::ostringstream os;
    const ModelConfig& m = rc.model;
    os << "[model]\n";
    os << "kind = " << model_kind_name(m.kind) << "\n";
    os << "layers = " << m.layers << "\n";
    os << "d_model = " << m.d_model << "\n";
    os << "d_inter = " << m.d_inter << "\n";
    os << "d_head = " << m.d_head << "\n";
    os << "n_q_heads = " << m.n_q_heads << "\n";
    os << "n_kv_heads = " << m.n_kv_heads << "\n";
    os << "vocab_size = " << m.vocab_size << "\n";
    os << "rope_theta = " << real_str(m.rope_theta) << "\n";
    os << "rmsnorm_eps = " << real_str(m.rmsnorm_eps) << "\n";
    os << "dtype = " << dtype_name(m.dtype) << "\n";
    os << "batch = " << m.batch << "\n";
    if (m.quant) {
        os << "quant_bits = " << m.quant->bits << "\n";
        os << "quant_group_size = " << m.quant->group_size << "\n";
        os << "quant_scheme = " << m.quant->scheme << "\n";
    }
    const HardwareConfig& h = rc.hardware;
    os << "\n[hardware]\n";
    os << "num_sms = " << h.num_sms << "\n";
    os << "shared_mem_per_sm = " << h.shared_mem_per_sm << "\n";
    os << "registers_per_sm = " << h.registers_per_sm << "\n";
    os << "hbm_capacity = " << h.hbm_capacity << "\n";
    os << "peak_bandwidth = " << real_str(h.peak_bandwidth) << "\n";
    os << "kernel_launch_overhead = " << real_str(h.kernel_launch_overhead) << "\n";
    os << "barrier_latency = " << real_str(h.barrier_latency) << "\n";
    os << "compute_throughput_per_sm = " << real_str(h.compute_throughput_per_sm) << "\n";
    const PipelineConfig& p = rc.pipeline;
    os << "\n[pipeline]\n";
    os << "stage_size = " << p.stage_size << "\n";
    os << "depth = " << p.depth << "\n";
    os << "consumer_warps = " << p.consumer_warps << "\n";
    os << "\n[run]\n";
    os << "mode = " << mode_name(rc.mode) << "\n";
    os << "seq_len = " << rc.seq_len << "\n";
    os << "seed = " << rc.seed << "\n";
    return os.str();
}

inline RunConfig parse_config(const std::string& text) {
    using namespace detail;
    IniDoc doc = parse_ini(text);
    for (const auto& [name, _] : doc) {
        if (name != "model" && name != "hardware" && name != "pipeline" && name != "run")
            throw ParseError("config: unknown section [" + name + "]");
    }
    RunConfig rc;
    auto get = [&](const std::string& sec) -> const Section* {
        auto it = doc.find(sec);
        return it == doc.end() ? nullptr : &it->second;
    };

    if (const Section* s = get("model")) {
        ModelConfig& m = rc.model;
        std::optional<int32_t> qbits;
        for (const auto& [k, v] : *s) {
            if (k == "kind") m.kind = model_kind_from_name(v);
            else if (k == "layers") m.layers = to_count(v, k);
            else if (k == "d_model") m.d_model = to_count(v, k);
            else if (k == "d_inter") m.d_inter = to_count(v, k);
            else if (k == "d_head") m.d_head = to_count(v, k);
            else if (k == "n_q_heads") m.n_q_heads = to_count(v, k);
            else if (k == "n_kv_heads") m.n_kv_heads = to_count(v, k);
            else if (k == "vocab_size") m.vocab_size = to_count(v, k);
            else if (k == "rope_theta") m.rope_theta = to_real(v, k);
            else if (k == "rmsnorm_eps") m.rmsnorm_eps = to_real(v, k);
            else if (k == "dtype") m.dtype = dtype_from_name(v);
            else if (k == "batch") m.batch = to_count(v, k);
            else if (k == "quant_bits") qbits = static_cast<int32_t>(to_count(v, k));
            else if (k == "quant_group_size" || k == "quant_scheme") continue;  // below
            else throw ParseError("config: unknown [model] field '" + k + "'");
        }
        if (qbits) {
            QuantConfig q;
            q.bits = *qbits;
            auto it = s->find("quant_group_size");
            if (it != s->end()) q.group_size = static_cast<int32_t>(to_count(it->second, it->first));
            it = s->find("quant_scheme");
            if (it != s->end()) q.scheme = it->second;
            m.quant = q;
        }
    } else {
        throw ParseError("config: missing [model] section");
    }

    if (const Section* s = get("hardware")) {
        HardwareConfig& h = rc.hardware;
        for (const auto& [k, v] : *s) {
            if (k == "num_sms") h.num_sms = to_count(v, k);
            else if (k == "shared_mem_per_sm") h.shared_mem_per_sm = to_bytes(v, k);
            else if (k == "registers_per_sm") h.registers_per_sm = to_bytes(v, k);
            else if (k == "hbm_capacity") h.hbm_capacity = to_bytes(v, k);
            else if (k == "peak_bandwidth") h.peak_bandwidth = to_real(v, k);
            else if (k == "kernel_launch_overhead") h.kernel_launch_overhead = to_real(v, k);
            else if (k == "barrier_latency") h.barrier_latency = to_real(v, k);
            else if (k == "compute_throughput_per_sm") h.compute_throughput_per_sm = to_real(v, k);
            else throw ParseError("config: unknown [hardware] field '" + k + "'");
        }
    }

    if (const Section* s = get("pipeline")) {
        PipelineConfig& p = rc.pipeline;
        for (const auto& [k, v] : *s) {
            if (k == "stage_size") p.stage_size = to_bytes(v, k);
            else if (k == "depth") p.depth = to_count(v, k);
            else if (k == "consumer_warps") p.consumer_warps = to_count(v, k);
            else throw ParseError("config: unknown [pipeline] field '" + k + "'");
        }
    }

    if (const Section* s = get("run")) {
        for (const auto& [k, v] : *s) {
            if (k == "mode") rc.mode = mode_from_name(v);
            else if (k == "seq_len") rc.seq_len = to_count(v, k);
            else if (k == "seed") rc.seed = static_cast<uint64_t>(to_count(v, k));
            else throw ParseError("config: unknown [run] field '" + k + "'");
        }
    }

    rc.validate();
    return rc;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline uint64_t config_hash(const RunConfig& rc) { return fnv1a(serialize(rc)); }

}  // namespace fusesim

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

namespace fusesim {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes: usage=1, validation=2,
// oracle/verification=3.
// ---------------------------------------------------------------------------
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VerifyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct OracleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Element types. Values are held as f32 in memory; DType drives byte
// accounting and storage rounding.
// ---------------------------------------------------------------------------
enum class DType : uint8_t { BF16, F32 };

inline uint64_t dtype_bytes(DType t) { return t == DType::BF16 ? 2 : 4; }

inline const char* dtype_name(DType t) { return t == DType::BF16 ? "bf16" : "fp32"; }

inline DType dtype_from_name(const std::string& s) {
    if (s == "bf16") return DType::BF16;
    if (s == "fp32" || s == "f32") return DType::F32;
    throw ParseError("unknown dtype: " + s);
}

// Round-to-nearest-even truncation of an f32 to the bf16 grid.
inline float bf16_round(float x) {
    uint32_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    uint32_t lsb = (bits >> 16) & 1u;
    bits += 0x7fffu + lsb;
    bits &= 0xffff0000u;
    float out;
    std::memcpy(&out, &bits, sizeof(out));
    return out;
}

// ---------------------------------------------------------------------------
// Execution modes.
// ---------------------------------------------------------------------------
enum class RunMode : uint8_t { Baseline, Fused, FusedOverlap };

inline const char* mode_name(RunMode m) {
    switch (m) {
        case RunMode::Baseline: return "baseline";
        case RunMode::Fused: return "fused";
        case RunMode::FusedOverlap: return "fused_overlap";
    }
    return "?";
}

inline RunMode mode_from_name(const std::string& s) {
    if (s == "baseline") return RunMode::Baseline;
    if (s == "fused") return RunMode::Fused;
    if (s == "fused_overlap" || s == "overlap") return RunMode::FusedOverlap;
    throw ParseError("unknown mode: " + s);
}

// ---------------------------------------------------------------------------
// Matrix identity: which streamed matrix a chunk belongs to.
// ---------------------------------------------------------------------------
enum class MatrixKind : uint8_t {
    Wqkv,     // fused QKV projection weights
    Waout,    // attention output projection
    Wffn1,    // GLU in/gate rows, interleaved (even=in, odd=gate)
    Wffn2,    // GLU output projection, stored transposed (rows = inter dims)
    LmHead,   // final vocabulary projection
    KCache,   // per-(layer, kv head, batch row) key cache
    VCache,   // value cache
    Linear,   // square layer of a stacked-linear model
};

inline const char* matrix_tag(MatrixKind k) {
    switch (k) {
        case MatrixKind::Wqkv: return "qkv";
        case MatrixKind::Waout: return "aout";
        case MatrixKind::Wffn1: return "ffn1";
        case MatrixKind::Wffn2: return "ffn2";
        case MatrixKind::LmHead: return "lm_head";
        case MatrixKind::KCache: return "kcache";
        case MatrixKind::VCache: return "vcache";
        case MatrixKind::Linear: return "linear";
    }
    return "?";
}

inline bool is_kv_cache(MatrixKind k) {
    return k == MatrixKind::KCache || k == MatrixKind::VCache;
}

struct MatrixId {
    int32_t layer = 0;
    MatrixKind kind = MatrixKind::Linear;
    int32_t kv_head = -1;    // only for KCache/VCache
    int32_t batch_row = -1;  // only for KCache/VCache

    friend bool operator==(const MatrixId&, const MatrixId&) = default;
};

enum class LoadClass : uint8_t { Weight, KvCache };

// Sublayers, in per-layer schedule order. CoreAttn spans two barrier epochs
// (partials+metadata, then rescale+accumulate).
enum class Sublayer : uint8_t { Qkv, CoreAttn, Aout, Glu, LmHead, Linear };

inline const char* sublayer_name(Sublayer s) {
    switch (s) {
        case Sublayer::Qkv: return "qkv";
        case Sublayer::CoreAttn: return "core_attn";
        case Sublayer::Aout: return "aout";
        case Sublayer::Glu: return "glu";
        case Sublayer::LmHead: return "lm_head";
        case Sublayer::Linear: return "linear";
    }
    return "?";
}

// FNV-1a, used for config hashes and logit checksums in reports.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace fusesim

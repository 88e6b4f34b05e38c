// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusesim/partition.hpp"

namespace fusesim {

// ---------------------------------------------------------------------------
// Per-thread-block instruction stream. AsyncLoad is non-blocking (producer
// side); AwaitStage blocks the consumer until the slot's load lands;
// ReleaseStage frees the slot for reuse. GlobalBarrier orders global reads
// after writes across all blocks. LaunchMarker models a kernel boundary:
// the simulator drains pipelines and charges the launch overhead there.
// ---------------------------------------------------------------------------
enum class OpCode : uint8_t {
    AsyncLoad,
    AwaitStage,
    Compute,
    ReleaseStage,
    GlobalBarrier,
    SyncLoadCurrentToken,
    WriteGlobal,
    LaunchMarker,
};

enum class ComputeKind : uint8_t {
    RmsnormMatvecQkv,     // chunk rows of the QKV projection + rotary on q/k rows
    AttnQkPvPartial,      // online-softmax update over one (K, V) chunk pair
    AttnCurrentToken,     // same update for the synchronously loaded position
    AttnReduceMeta,       // finalize (max logit, denominator) for publication
    AttnReduceRescale,    // read group metadata, rescale own accumulator
    AttnAccumulate,       // add rescaled output to the global sum
    MatvecAout,           // chunk rows of the attention output projection
    GluInGateSwigluOut,   // in/gate rows -> activation -> paired output columns
    GluReduce,            // contribute the block's d_model partial-output vector
    MatvecLmHead,         // chunk rows of the vocabulary projection
    MatvecLinear,         // chunk rows of one stacked-linear layer
};

inline const char* compute_kind_name(ComputeKind k) {
    switch (k) {
        case ComputeKind::RmsnormMatvecQkv: return "rmsnorm_matvec_qkv";
        case ComputeKind::AttnQkPvPartial: return "attn_qk_pv_partial";
        case ComputeKind::AttnCurrentToken: return "attn_current_token";
        case ComputeKind::AttnReduceMeta: return "attn_reduce_meta";
        case ComputeKind::AttnReduceRescale: return "attn_reduce_rescale";
        case ComputeKind::AttnAccumulate: return "attn_accumulate";
        case ComputeKind::MatvecAout: return "matvec_aout";
        case ComputeKind::GluInGateSwigluOut: return "glu_in_gate_swiglu_out";
        case ComputeKind::GluReduce: return "glu_reduce";
        case ComputeKind::MatvecLmHead: return "matvec_lmhead";
        case ComputeKind::MatvecLinear: return "matvec_linear";
    }
    return "?";
}

enum class WriteTarget : uint8_t {
    QkvAndCurrentKv,  // q vector + current-token K/V append
    AttnMeta,         // (m, l) metadata per replicated query head
    AttnOutAccum,     // rescaled partial attention outputs
    ResidualAout,     // residual += attention output rows
    ResidualGlu,      // residual += GLU partial-output vectors
    Logits,
    LinearOut,        // stacked-linear layer output rows
};

inline const char* write_target_name(WriteTarget t) {
    switch (t) {
        case WriteTarget::QkvAndCurrentKv: return "qkv";
        case WriteTarget::AttnMeta: return "attn_meta";
        case WriteTarget::AttnOutAccum: return "attn_out";
        case WriteTarget::ResidualAout: return "residual_aout";
        case WriteTarget::ResidualGlu: return "residual_glu";
        case WriteTarget::Logits: return "logits";
        case WriteTarget::LinearOut: return "linear_out";
    }
    return "?";
}

struct Instruction {
    OpCode op = OpCode::GlobalBarrier;
    int32_t layer = -1;
    Sublayer sublayer = Sublayer::Linear;

    // AsyncLoad / AwaitStage / ReleaseStage / Compute
    int32_t slot = -1;
    int32_t slot2 = -1;  // second operand slot for paired computes
    ChunkDescriptor chunk;    // AsyncLoad payload; Compute primary operand
    ChunkDescriptor chunk2;   // Compute secondary operand (V chunk / ffn2 columns)
    bool has_chunk = false;
    bool has_chunk2 = false;
    bool hoisted = false;     // load issued ahead of its home barrier epoch
    int32_t fence_ahead = 0;  // sync points between issue site and home epoch

    // Compute
    ComputeKind kind = ComputeKind::MatvecLinear;
    uint64_t cost_elements = 0;  // per-block element throughput cost
    int32_t kv_head = -1;        // attention computes / sync loads
    int32_t batch_row = -1;      // kv loads and attention computes

    // GlobalBarrier / LaunchMarker
    int32_t barrier_id = -1;
    int32_t launch_id = -1;

    // WriteGlobal
    WriteTarget target = WriteTarget::Logits;

    // SyncLoadCurrentToken
    uint64_t sync_bytes = 0;
};

struct DeviceProgram {
    int32_t block_id = 0;
    RunMode mode = RunMode::Fused;
    uint64_t stage_size = 0;
    int64_t depth = 0;
    int64_t consumer_warps = 0;
    uint64_t shared_footprint_bytes = 0;
    std::vector<Instruction> instructions;
};

}  // namespace fusesim

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "fusesim/config.hpp"
#include "fusesim/tensor_store.hpp"

namespace fusesim {

// ---------------------------------------------------------------------------
// ChunkDescriptor: a fixed-byte slice of one streamed matrix. Chunks are cut
// on whole-row boundaries so a chunk always produces complete output
// elements (weights) or complete keys/values (cache).
// ---------------------------------------------------------------------------
struct ChunkDescriptor {
    MatrixId matrix;
    uint64_t byte_offset = 0;
    uint64_t byte_len = 0;
    int64_t row_start = 0;
    int64_t row_end = 0;  // exclusive
    int64_t cols = 0;     // logical row length
    DType dtype = DType::BF16;
    bool quantized = false;
    LoadClass load_class = LoadClass::Weight;
    int32_t chunk_index = 0;

    int64_t rows() const { return row_end - row_start; }
    int64_t elements() const { return rows() * cols; }
};

// One ordered chunk list per thread block.
struct BlockAssignment {
    std::vector<std::vector<ChunkDescriptor>> per_block;

    uint64_t total_bytes() const {
        uint64_t t = 0;
        for (const auto& blk : per_block)
            for (const auto& c : blk) t += c.byte_len;
        return t;
    }
};

// Splits `meta` into row-granular chunks of at most `chunk_bytes` each.
// `row_align` forces the rows-per-chunk count to a multiple (the QKV matrix
// needs pair alignment for the rotary step; the GLU in/gate matrix keeps
// in/gate row pairs together).
inline std::vector<ChunkDescriptor> chunk_matrix(const MatrixMeta& meta, uint64_t chunk_bytes,
                                                 LoadClass load_class = LoadClass::Weight,
                                                 int64_t row_align = 1) {
    uint64_t row_bytes = meta.row_bytes();
    if (row_bytes == 0 || meta.rows == 0) return {};
    int64_t rows_per_chunk = static_cast<int64_t>(chunk_bytes / row_bytes);
    rows_per_chunk -= rows_per_chunk % row_align;
    if (rows_per_chunk < 1)
        throw ValidationError("chunk_matrix: chunk of " + std::to_string(chunk_bytes) +
                              " bytes smaller than " + std::to_string(row_align) +
                              " row(s) of " + std::to_string(row_bytes) + " bytes");
    std::vector<ChunkDescriptor> out;
    out.reserve(static_cast<size_t>((meta.rows + rows_per_chunk - 1) / rows_per_chunk));
    for (int64_t r = 0; r < meta.rows; r += rows_per_chunk) {
        ChunkDescriptor c;
        c.matrix = meta.id;
        c.row_start = r;
        c.row_end = std::min(meta.rows, r + rows_per_chunk);
        c.byte_offset = static_cast<uint64_t>(r) * row_bytes;
        c.byte_len = static_cast<uint64_t>(c.row_end - c.row_start) * row_bytes;
        c.cols = meta.cols;
        c.dtype = meta.dtype;
        c.quantized = meta.quantized;
        c.load_class = load_class;
        c.chunk_index = static_cast<int32_t>(out.size());
        out.push_back(c);
    }
    return out;
}

// Round-robin by chunk index: chunk i goes to block i mod num_blocks.
inline BlockAssignment assign_chunks(const std::vector<ChunkDescriptor>& chunks,
                                     int64_t num_blocks) {
    if (num_blocks < 1) throw ValidationError("assign_chunks: num_blocks must be >= 1");
    BlockAssignment a;
    a.per_block.resize(num_blocks);
    for (const auto& c : chunks) a.per_block[c.chunk_index % num_blocks].push_back(c);
    return a;
}

// ---------------------------------------------------------------------------
// Core-attention partition: thread blocks are split among kv heads in groups
// of `group_size`; each block in a group holds a replicated copy of that
// head's query heads.
// ---------------------------------------------------------------------------
struct AttentionPartition {
    int64_t group_size = 8;
    int64_t n_kv_heads = 0;
    int64_t q_heads_per_group = 0;

    int64_t participating_blocks() const { return group_size * n_kv_heads; }
    int64_t kv_head_of_block(int64_t block) const { return block / group_size; }
    int64_t group_slot_of_block(int64_t block) const { return block % group_size; }
    bool participates(int64_t block) const { return block < participating_blocks(); }
    int64_t first_block_of_head(int64_t head) const { return head * group_size; }
    // Query heads replicated on every block of `head`'s group.
    int64_t q_head_begin(int64_t head) const { return head * q_heads_per_group; }
    int64_t q_head_end(int64_t head) const { return (head + 1) * q_heads_per_group; }
};

inline AttentionPartition partition_attention(const ModelConfig& m, const HardwareConfig& hw,
                                              int64_t group_size = 8) {
    if (m.kind != ModelKind::LlamaDecoder)
        throw ValidationError("partition_attention: model has no attention sublayer");
    if (group_size < 1) throw ValidationError("partition_attention: group_size must be >= 1");
    if (group_size * m.n_kv_heads > hw.num_sms)
        throw ValidationError("partition_attention: group_size * n_kv_heads = " +
                              std::to_string(group_size * m.n_kv_heads) + " exceeds " +
                              std::to_string(hw.num_sms) + " SMs");
    AttentionPartition p;
    p.group_size = group_size;
    p.n_kv_heads = m.n_kv_heads;
    p.q_heads_per_group = m.q_group();
    return p;
}

// Rows of K (or V) cache that fit one pipeline stage.
inline int64_t kv_chunk_rows(const ModelConfig& m, uint64_t stage_size) {
    uint64_t row_bytes = static_cast<uint64_t>(m.d_head) * dtype_bytes(m.dtype);
    int64_t rows = static_cast<int64_t>(stage_size / row_bytes);
    if (rows < 1) throw ValidationError("kv chunk: stage smaller than one cache row");
    return rows;
}

// Planned async K/V loads for one (kv head, batch row) at a given history
// length. Returned as position ranges; the current token is excluded (it is
// loaded synchronously by the group leader).
struct KvLoadPlan {
    // kv_chunks[group_slot] = chunks assigned to that block of the group.
    std::vector<std::vector<ChunkDescriptor>> k_per_slot;
    std::vector<std::vector<ChunkDescriptor>> v_per_slot;
};

inline KvLoadPlan plan_kv_loads(const AttentionPartition& part, const ModelConfig& m,
                                int64_t layer, int64_t batch_row, int64_t seq_len,
                                int64_t chunk_rows) {
    if (seq_len < 0) throw ValidationError("plan_kv_loads: seq_len must be >= 0");
    KvLoadPlan plan;
    plan.k_per_slot.resize(part.group_size);
    plan.v_per_slot.resize(part.group_size);
    uint64_t row_bytes = static_cast<uint64_t>(m.d_head) * dtype_bytes(m.dtype);
    int64_t n_chunks = (seq_len + chunk_rows - 1) / chunk_rows;
    for (int64_t j = 0; j < n_chunks; ++j) {
        int64_t slot = j % part.group_size;
        int64_t r0 = j * chunk_rows;
        int64_t r1 = std::min(seq_len, r0 + chunk_rows);
        for (bool is_k : {true, false}) {
            ChunkDescriptor c;
            c.matrix = MatrixId{static_cast<int32_t>(layer),
                                is_k ? MatrixKind::KCache : MatrixKind::VCache,
                                /*kv_head=*/-1, static_cast<int32_t>(batch_row)};
            c.row_start = r0;
            c.row_end = r1;
            c.byte_offset = static_cast<uint64_t>(r0) * row_bytes;
            c.byte_len = static_cast<uint64_t>(r1 - r0) * row_bytes;
            c.cols = m.d_head;
            c.dtype = m.dtype;
            c.load_class = LoadClass::KvCache;
            c.chunk_index = static_cast<int32_t>(j);
            (is_k ? plan.k_per_slot : plan.v_per_slot)[slot].push_back(c);
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Barrier schedule. One entry per global synchronization, in program order.
// Attention takes three per layer (qkv publish, reduction metadata, output
// accumulation), then one after the residual update and one after the GLU
// reduction; the GLU interior has none.
// ---------------------------------------------------------------------------
struct BarrierPoint {
    int32_t barrier_id = 0;
    int32_t layer = -1;  // -1 for the tail
    Sublayer sublayer = Sublayer::Linear;
};

// ---------------------------------------------------------------------------
// WorkloadPlan: the full compile-time partition for one configuration.
// Pure function of (model, hardware, pipeline, seq_len, group_size).
// ---------------------------------------------------------------------------
struct WorkloadPlan {
    ModelConfig model;
    HardwareConfig hardware;
    PipelineConfig pipeline;
    int64_t seq_len = 0;
    int64_t num_blocks = 0;
    int64_t attn_group_size = 8;

    // Weight assignments in schedule order. For the decoder: per layer
    // [wqkv, waout, wffn1] and the tail lm_head; the wffn2 columns paired
    // with each wffn1 chunk ride along (glu_pair). For stacked linear: one
    // assignment per layer.
    std::vector<BlockAssignment> qkv;    // per layer
    std::vector<BlockAssignment> aout;   // per layer
    std::vector<BlockAssignment> ffn1;   // per layer
    std::vector<BlockAssignment> ffn2;   // per layer, index-aligned with ffn1
    BlockAssignment lmhead;
    std::vector<BlockAssignment> linear;  // per layer (stacked kind)

    AttentionPartition attention;
    // kv_loads[layer][batch_row] per-group-slot chunk lists.
    std::vector<std::vector<KvLoadPlan>> kv_loads;
    std::vector<BarrierPoint> barriers;

    int64_t chunk_rows_kv = 0;

    uint64_t weight_bytes() const {
        uint64_t t = lmhead.total_bytes();
        for (const auto& a : qkv) t += a.total_bytes();
        for (const auto& a : aout) t += a.total_bytes();
        for (const auto& a : ffn1) t += a.total_bytes();
        for (const auto& a : ffn2) t += a.total_bytes();
        for (const auto& a : linear) t += a.total_bytes();
        return t;
    }

    // Async KV bytes; excludes the synchronous current-token loads.
    uint64_t kv_bytes() const {
        uint64_t t = 0;
        for (const auto& per_batch : kv_loads)
            for (const auto& plan : per_batch) {
                for (const auto& slot : plan.k_per_slot)
                    for (const auto& c : slot) t += c.byte_len;
                for (const auto& slot : plan.v_per_slot)
                    for (const auto& c : slot) t += c.byte_len;
            }
        // One plan is shared by all kv heads of a layer; scale by head count.
        return t * static_cast<uint64_t>(model.n_kv_heads);
    }

    // Synchronous current-token K/V bytes (one load per (layer, head, batch)).
    uint64_t sync_kv_bytes() const {
        if (model.kind != ModelKind::LlamaDecoder) return 0;
        return static_cast<uint64_t>(model.layers) * model.n_kv_heads * model.batch * 2 *
               model.d_head * dtype_bytes(model.dtype);
    }
};

// The paired GLU output-projection chunk for a given in/gate chunk: the
// matching transposed rows, assigned to the same block so the accumulation
// never leaves it.
inline ChunkDescriptor glu_pair_chunk(const ChunkDescriptor& f1, const MatrixMeta& ffn2_meta) {
    ChunkDescriptor c;
    c.matrix = ffn2_meta.id;
    c.row_start = f1.row_start / 2;
    c.row_end = f1.row_end / 2;
    c.byte_offset = static_cast<uint64_t>(c.row_start) * ffn2_meta.row_bytes();
    c.byte_len = static_cast<uint64_t>(c.row_end - c.row_start) * ffn2_meta.row_bytes();
    c.cols = ffn2_meta.cols;
    c.dtype = ffn2_meta.dtype;
    c.quantized = ffn2_meta.quantized;
    c.load_class = LoadClass::Weight;
    c.chunk_index = f1.chunk_index;
    return c;
}

inline WorkloadPlan build_plan(const ModelConfig& model, const HardwareConfig& hw,
                               const PipelineConfig& pipe, int64_t seq_len,
                               int64_t attn_group_size = 8) {
    model.validate();
    hw.validate();
    pipe.validate(hw);
    if (seq_len < 0) throw ValidationError("build_plan: seq_len must be >= 0");
    if (shared_footprint(pipe.stage_size, pipe.depth, model) > hw.shared_mem_per_sm)
        throw ValidationError("build_plan: pipeline footprint exceeds shared memory");

    WorkloadPlan plan;
    plan.model = model;
    plan.hardware = hw;
    plan.pipeline = pipe;
    plan.seq_len = seq_len;
    plan.num_blocks = hw.num_sms;  // one cooperative thread block per SM

    int32_t next_barrier = 0;
    auto barrier = [&](int32_t layer, Sublayer s) {
        plan.barriers.push_back(BarrierPoint{next_barrier++, layer, s});
    };

    if (model.kind == ModelKind::StackedLinear) {
        for (int32_t l = 0; l < model.layers; ++l) {
            MatrixMeta meta = weight_meta(model, MatrixKind::Linear, l);
            plan.linear.push_back(assign_chunks(chunk_matrix(meta, pipe.stage_size), plan.num_blocks));
            barrier(l, Sublayer::Linear);
        }
        return plan;
    }

    plan.attention = partition_attention(model, hw, attn_group_size);
    plan.attn_group_size = attn_group_size;
    plan.chunk_rows_kv = kv_chunk_rows(model, pipe.stage_size);
    plan.kv_loads.resize(model.layers);

    for (int32_t l = 0; l < model.layers; ++l) {
        MatrixMeta qkv_meta = weight_meta(model, MatrixKind::Wqkv, l);
        // Pair alignment keeps both elements of each rotary pair in one chunk.
        plan.qkv.push_back(
            assign_chunks(chunk_matrix(qkv_meta, pipe.stage_size, LoadClass::Weight, 2),
                          plan.num_blocks));

        MatrixMeta aout_meta = weight_meta(model, MatrixKind::Waout, l);
        plan.aout.push_back(assign_chunks(chunk_matrix(aout_meta, pipe.stage_size), plan.num_blocks));

        MatrixMeta ffn1_meta = weight_meta(model, MatrixKind::Wffn1, l);
        MatrixMeta ffn2_meta = weight_meta(model, MatrixKind::Wffn2, l);
        // In/gate rows are interleaved; align to 2 so each chunk carries
        // matching in and gate rows.
        std::vector<ChunkDescriptor> f1 =
            chunk_matrix(ffn1_meta, pipe.stage_size, LoadClass::Weight, 2);
        BlockAssignment a1 = assign_chunks(f1, plan.num_blocks);
        BlockAssignment a2;
        a2.per_block.resize(plan.num_blocks);
        for (int64_t b = 0; b < plan.num_blocks; ++b)
            for (const auto& c : a1.per_block[b])
                a2.per_block[b].push_back(glu_pair_chunk(c, ffn2_meta));
        plan.ffn1.push_back(std::move(a1));
        plan.ffn2.push_back(std::move(a2));

        plan.kv_loads[l].reserve(model.batch);
        for (int64_t b = 0; b < model.batch; ++b)
            plan.kv_loads[l].push_back(
                plan_kv_loads(plan.attention, model, l, b, seq_len, plan.chunk_rows_kv));

        barrier(l, Sublayer::Qkv);       // qkv written, current token appended
        barrier(l, Sublayer::CoreAttn);  // reduction metadata published
        barrier(l, Sublayer::CoreAttn);  // attention output accumulated
        barrier(l, Sublayer::Aout);      // residual updated
        barrier(l, Sublayer::Glu);       // GLU partial outputs reduced
    }

    MatrixMeta lm_meta = weight_meta(model, MatrixKind::LmHead, -1);
    plan.lmhead = assign_chunks(chunk_matrix(lm_meta, pipe.stage_size), plan.num_blocks);
    barrier(-1, Sublayer::LmHead);  // logits published
    return plan;
}

}  // namespace fusesim

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <tuple>
#include <vector>

#include "fusesim/emit.hpp"
#include "fusesim/numerics.hpp"
#include "fusesim/tensor_store.hpp"

namespace fusesim {

// ---------------------------------------------------------------------------
// Functional execution of emitted programs. Blocks run epoch by epoch
// (an epoch is one barrier interval); global writes stage per block and
// commit at the barrier, cross-block sums in block-id order so every mode
// produces bit-identical values. Reads check that the writer's barrier has
// passed and throw on memory-order violations.
//
// Accumulation is f32. Loads and their slots carry no value semantics here;
// computes read the store directly (planned cache chunks only ever touch
// positions written in earlier steps).
// ---------------------------------------------------------------------------

namespace detail {

struct BlockLocal {
    // Per (replicated q head, batch row) online-softmax state for the
    // current layer's core attention.
    std::vector<PartialAttention<float>> partials;
    std::vector<std::vector<float>> rescaled;  // same indexing, after stage 2
    std::vector<std::vector<float>> glu_acc;   // per batch row, d_model

    // staged global writes, committed at the next barrier
    std::vector<std::tuple<int32_t, int64_t, float>> qkv_rows;    // (batch, row, value)
    std::vector<std::tuple<int32_t, int64_t, float, float>> meta;  // (q_local, batch, m, l)
    std::vector<std::tuple<int32_t, int64_t, float>> resid_add;   // (batch, row, delta)
    std::vector<std::tuple<int32_t, int64_t, float>> out_rows;    // (batch, row, value) logits/linear
    bool stage_accumulate = false;  // rescaled outputs pending
    bool stage_glu = false;
};

constexpr int64_t kEpochInit = -1;

}  // namespace detail

struct InterpreterResult {
    std::vector<std::vector<float>> logits;  // batch x vocab (llama) or d_model (stacked)
};

class Interpreter {
public:
    Interpreter(const WorkloadPlan& plan, const std::vector<DeviceProgram>& programs,
                TensorStore& store)
        : plan_(plan), programs_(programs), store_(store) {
        if (static_cast<int64_t>(programs.size()) != plan.num_blocks)
            throw VerifyError("interpreter: one program per block required");
        split_epochs();
    }

    InterpreterResult run(const std::vector<int64_t>& tokens, int64_t pos) {
        const ModelConfig& m = plan_.model;
        pos_ = pos;
        init_state(tokens);

        int64_t n_epochs = static_cast<int64_t>(plan_.barriers.size());
        for (int64_t e = 0; e < n_epochs; ++e) {
            for (int64_t b = 0; b < plan_.num_blocks; ++b)
                for (size_t i = epoch_begin_[b][e]; i < epoch_end_[b][e]; ++i)
                    exec(b, e, programs_[b].instructions[i]);
            commit(e);
        }

        InterpreterResult res;
        if (m.kind == ModelKind::LlamaDecoder) {
            res.logits = logits_;
        } else {
            res.logits = x_;
            for (int64_t b = 0; b < m.batch; ++b) store_.residual[b] = x_[b];
        }
        return res;
    }

private:
    const WorkloadPlan& plan_;
    const std::vector<DeviceProgram>& programs_;
    TensorStore& store_;
    int64_t pos_ = 0;
    float alpha_ = 1.0f;

    // epoch_begin_[block][epoch] .. epoch_end_[block][epoch)
    std::vector<std::vector<size_t>> epoch_begin_, epoch_end_;

    // committed global state
    std::vector<std::vector<float>> x_;  // batch x d_model
    int64_t x_epoch_ = detail::kEpochInit;
    std::vector<std::vector<float>> q_buf_;  // batch x (n_q*dh)
    int32_t q_layer_ = -1;
    std::vector<std::vector<float>> k_cur_, v_cur_;  // batch x (n_kv*dh)
    int32_t kv_appended_layer_ = -1;
    // committed metadata: [block][q_local*batch + b] -> (m, l)
    std::vector<std::vector<std::pair<float, float>>> meta_buf_;
    int32_t meta_layer_ = -1;
    std::vector<std::vector<float>> attn_out_;  // batch x (n_q*dh)
    int32_t attn_layer_ = -1;
    std::vector<std::vector<float>> logits_;    // batch x vocab
    std::vector<std::vector<float>> x_next_;    // stacked-linear staging target

    std::vector<detail::BlockLocal> locals_;
    // cached per-layer normalized inputs (identical for every block)
    std::vector<std::vector<float>> norm_cache_;
    int32_t norm_cache_layer_ = -2;
    int norm_cache_kind_ = -1;  // 0=attn, 1=ffn, 2=final

    void split_epochs() {
        int64_t n_epochs = static_cast<int64_t>(plan_.barriers.size());
        epoch_begin_.assign(programs_.size(), {});
        epoch_end_.assign(programs_.size(), {});
        for (size_t b = 0; b < programs_.size(); ++b) {
            const auto& ins = programs_[b].instructions;
            size_t start = 0;
            for (size_t i = 0; i < ins.size(); ++i) {
                if (ins[i].op == OpCode::GlobalBarrier) {
                    epoch_begin_[b].push_back(start);
                    epoch_end_[b].push_back(i);
                    start = i + 1;
                }
            }
            if (static_cast<int64_t>(epoch_begin_[b].size()) != n_epochs)
                throw VerifyError("interpreter: barrier count differs from the plan schedule");
        }
    }

    void init_state(const std::vector<int64_t>& tokens) {
        const ModelConfig& m = plan_.model;
        alpha_ = 1.0f / std::sqrt(static_cast<float>(std::max<int64_t>(m.d_head, 1)));
        locals_.assign(plan_.num_blocks, {});
        x_epoch_ = detail::kEpochInit;
        q_layer_ = meta_layer_ = attn_layer_ = kv_appended_layer_ = -1;
        norm_cache_layer_ = -2;

        if (m.kind == ModelKind::StackedLinear) {
            x_ = store_.residual;
            x_next_.assign(m.batch, std::vector<float>(m.d_model, 0.0f));
            return;
        }
        if (static_cast<int64_t>(tokens.size()) != m.batch)
            throw ValidationError("execute_program: one token per batch row required");
        x_.assign(m.batch, {});
        for (int64_t b = 0; b < m.batch; ++b) {
            if (tokens[b] < 0 || tokens[b] >= m.vocab_size)
                throw ValidationError("execute_program: token id out of range");
            const float* row = store_.embedding.row(tokens[b]);
            x_[b].assign(row, row + m.d_model);
        }
        q_buf_.assign(m.batch, std::vector<float>(m.n_q_heads * m.d_head, 0.0f));
        k_cur_.assign(m.batch, std::vector<float>(m.n_kv_heads * m.d_head, 0.0f));
        v_cur_.assign(m.batch, std::vector<float>(m.n_kv_heads * m.d_head, 0.0f));
        meta_buf_.assign(plan_.num_blocks, {});
        attn_out_.assign(m.batch, std::vector<float>(m.n_q_heads * m.d_head, 0.0f));
        logits_.assign(m.batch, std::vector<float>(m.vocab_size, 0.0f));
        for (int64_t b = 0; b < plan_.num_blocks; ++b) {
            int64_t n = plan_.attention.q_heads_per_group * m.batch;
            locals_[b].partials.assign(n, PartialAttention<float>(m.d_head));
            locals_[b].rescaled.assign(n, std::vector<float>(m.d_head, 0.0f));
            locals_[b].glu_acc.assign(m.batch, std::vector<float>(m.d_model, 0.0f));
        }
    }

    [[noreturn]] void violation(const std::string& what) const {
        throw VerifyError("memory-order violation: " + what);
    }

    const std::vector<float>& normed_input(int32_t layer, int kind) {
        // kind: 0 = attention norm, 1 = ffn norm, 2 = final norm
        if (norm_cache_layer_ == layer && norm_cache_kind_ == kind) return norm_cache_[0];
        const ModelConfig& m = plan_.model;
        norm_cache_.assign(m.batch, {});
        const std::vector<float>& w = kind == 0   ? store_.layers[layer].norm_attn
                                      : kind == 1 ? store_.layers[layer].norm_ffn
                                                  : store_.final_norm;
        for (int64_t b = 0; b < m.batch; ++b)
            norm_cache_[b] = rmsnorm(x_[b], w, static_cast<float>(m.rmsnorm_eps));
        norm_cache_layer_ = layer;
        norm_cache_kind_ = kind;
        return norm_cache_[0];
    }
    const std::vector<float>& normed_input_row(int32_t layer, int kind, int64_t b) {
        normed_input(layer, kind);
        return norm_cache_[b];
    }

    void exec(int64_t block, int64_t epoch, const Instruction& ins) {
        switch (ins.op) {
            case OpCode::Compute: run_compute(block, epoch, ins); break;
            case OpCode::SyncLoadCurrentToken:
                if (kv_appended_layer_ != ins.layer)
                    violation("current-token K/V read before the append barrier");
                break;
            default: break;  // loads/awaits/releases/writes/markers carry no values
        }
    }

    void run_compute(int64_t block, int64_t epoch, const Instruction& ins) {
        switch (ins.kind) {
            case ComputeKind::MatvecLinear: matvec_linear(block, ins); break;
            case ComputeKind::RmsnormMatvecQkv: qkv_chunk(block, ins); break;
            case ComputeKind::AttnQkPvPartial: attn_chunk(block, ins, false); break;
            case ComputeKind::AttnCurrentToken: attn_chunk(block, ins, true); break;
            case ComputeKind::AttnReduceMeta: reduce_meta(block, ins); break;
            case ComputeKind::AttnReduceRescale: reduce_rescale(block, ins); break;
            case ComputeKind::AttnAccumulate: locals_[block].stage_accumulate = true; break;
            case ComputeKind::MatvecAout: aout_chunk(block, ins); break;
            case ComputeKind::GluInGateSwigluOut: glu_chunk(block, ins); break;
            case ComputeKind::GluReduce: locals_[block].stage_glu = true; break;
            case ComputeKind::MatvecLmHead: lmhead_chunk(block, ins); break;
        }
        (void)epoch;
    }

    void check_x(int64_t expected_epoch, const char* who) const {
        if (x_epoch_ != expected_epoch) violation(std::string(who) + " read a stale residual");
    }

    void matvec_linear(int64_t block, const Instruction& ins) {
        const ModelConfig& m = plan_.model;
        check_x(ins.layer == 0 ? detail::kEpochInit : ins.layer - 1, "matvec_linear");
        const Matrix& w = store_.linear_layers[ins.layer];
        for (int64_t b = 0; b < m.batch; ++b)
            for (int64_t r = ins.chunk.row_start; r < ins.chunk.row_end; ++r) {
                const float* row = w.row(r);
                float acc = 0.0f;
                for (int64_t c = 0; c < w.cols; ++c) acc += row[c] * x_[b][c];
                locals_[block].out_rows.emplace_back(static_cast<int32_t>(b), r, acc);
            }
    }

    void qkv_chunk(int64_t block, const Instruction& ins) {
        const ModelConfig& m = plan_.model;
        check_x(ins.layer == 0 ? detail::kEpochInit : 5 * ins.layer - 1, "qkv projection");
        const Matrix& w = store_.layers[ins.layer].wqkv;
        const int64_t dh = m.d_head;
        const int64_t q_rows = m.n_q_heads * dh;
        const int64_t k_rows = m.n_kv_heads * dh;
        for (int64_t b = 0; b < m.batch; ++b) {
            const std::vector<float>& u = normed_input_row(ins.layer, 0, b);
            int64_t r = ins.chunk.row_start;
            while (r < ins.chunk.row_end) {
                bool is_v = r >= q_rows + k_rows;
                if (is_v) {
                    const float* row = w.row(r);
                    float acc = 0.0f;
                    for (int64_t c = 0; c < w.cols; ++c) acc += row[c] * u[c];
                    locals_[block].qkv_rows.emplace_back(static_cast<int32_t>(b), r, acc);
                    ++r;
                    continue;
                }
                // q or k rows rotate pairwise; chunks are pair-aligned.
                float pair[2];
                for (int i = 0; i < 2; ++i) {
                    const float* row = w.row(r + i);
                    float acc = 0.0f;
                    for (int64_t c = 0; c < w.cols; ++c) acc += row[c] * u[c];
                    pair[i] = acc;
                }
                int64_t dim = r < q_rows ? r % dh : (r - q_rows) % dh;
                int64_t k = dim / 2;
                float freq = std::pow(static_cast<float>(m.rope_theta),
                                      -static_cast<float>(2 * k) / static_cast<float>(dh));
                float angle = static_cast<float>(pos_) * freq;
                float c = std::cos(angle), s = std::sin(angle);
                locals_[block].qkv_rows.emplace_back(static_cast<int32_t>(b), r,
                                                     pair[0] * c - pair[1] * s);
                locals_[block].qkv_rows.emplace_back(static_cast<int32_t>(b), r + 1,
                                                     pair[0] * s + pair[1] * c);
                r += 2;
            }
        }
    }

    void attn_chunk(int64_t block, const Instruction& ins, bool current_token) {
        const ModelConfig& m = plan_.model;
        if (q_layer_ != ins.layer) violation("core attention read q before its barrier");
        if (kv_appended_layer_ != ins.layer) violation("core attention before K/V append");
        const AttentionPartition& part = plan_.attention;
        const int64_t dh = m.d_head;
        const int64_t qpg = part.q_heads_per_group;
        const int32_t head = ins.kv_head;
        auto do_rows = [&](int64_t b, int64_t row0, int64_t row1) {
            for (int64_t ql = 0; ql < qpg; ++ql) {
                int64_t q_head = part.q_head_begin(head) + ql;
                const float* q = q_buf_[b].data() + q_head * dh;
                auto& st = locals_[block].partials[ql * m.batch + b];
                attn_partial_update(
                    st, row1 - row0, alpha_,
                    [&](int64_t j) {
                        const float* k = store_.kv.k_at(b, ins.layer, head, row0 + j);
                        float dot = 0.0f;
                        for (int64_t d = 0; d < dh; ++d) dot += q[d] * k[d];
                        return dot;
                    },
                    [&](int64_t j) { return store_.kv.v_at(b, ins.layer, head, row0 + j); });
            }
        };
        if (current_token) {
            for (int64_t b = 0; b < m.batch; ++b) do_rows(b, pos_, pos_ + 1);
        } else {
            do_rows(ins.batch_row, ins.chunk.row_start, ins.chunk.row_end);
        }
    }

    void reduce_meta(int64_t block, const Instruction& ins) {
        const ModelConfig& m = plan_.model;
        const int64_t qpg = plan_.attention.q_heads_per_group;
        for (int64_t ql = 0; ql < qpg; ++ql)
            for (int64_t b = 0; b < m.batch; ++b) {
                const auto& st = locals_[block].partials[ql * m.batch + b];
                locals_[block].meta.emplace_back(static_cast<int32_t>(ql), b, st.m, st.l);
            }
        (void)ins;
    }

    void reduce_rescale(int64_t block, const Instruction& ins) {
        const ModelConfig& m = plan_.model;
        if (meta_layer_ != ins.layer) violation("reduction metadata read before its barrier");
        const AttentionPartition& part = plan_.attention;
        const int64_t qpg = part.q_heads_per_group;
        const int32_t head = ins.kv_head;
        int64_t g0 = part.first_block_of_head(head);
        for (int64_t ql = 0; ql < qpg; ++ql)
            for (int64_t b = 0; b < m.batch; ++b) {
                float M = -std::numeric_limits<float>::infinity();
                for (int64_t s = 0; s < part.group_size; ++s) {
                    const auto& [mm, ll] = meta_buf_[g0 + s][ql * m.batch + b];
                    if (ll > 0.0f) M = std::max(M, mm);
                }
                float L = 0.0f;
                for (int64_t s = 0; s < part.group_size; ++s) {
                    const auto& [mm, ll] = meta_buf_[g0 + s][ql * m.batch + b];
                    if (ll > 0.0f) L += ll * std::exp(mm - M);
                }
                auto& st = locals_[block].partials[ql * m.batch + b];
                auto& out = locals_[block].rescaled[ql * m.batch + b];
                if (st.empty() || L <= 0.0f) {
                    std::fill(out.begin(), out.end(), 0.0f);
                    continue;
                }
                float r = std::exp(st.m - M) / L;
                for (int64_t d = 0; d < m.d_head; ++d) out[d] = st.o[d] * r;
            }
    }

    void aout_chunk(int64_t block, const Instruction& ins) {
        const ModelConfig& m = plan_.model;
        if (attn_layer_ != ins.layer) violation("output projection read attention before barrier");
        const Matrix& w = store_.layers[ins.layer].waout;
        for (int64_t b = 0; b < m.batch; ++b)
            for (int64_t r = ins.chunk.row_start; r < ins.chunk.row_end; ++r) {
                const float* row = w.row(r);
                float acc = 0.0f;
                for (int64_t c = 0; c < w.cols; ++c) acc += row[c] * attn_out_[b][c];
                locals_[block].resid_add.emplace_back(static_cast<int32_t>(b), r, acc);
            }
    }

    void glu_chunk(int64_t block, const Instruction& ins) {
        const ModelConfig& m = plan_.model;
        check_x(5 * ins.layer + 3, "glu in/gate");
        const Matrix& w1 = store_.layers[ins.layer].wffn1;
        const Matrix& w2 = store_.layers[ins.layer].wffn2t;
        int64_t pair_count = ins.chunk.rows() / 2;
        for (int64_t b = 0; b < m.batch; ++b) {
            const std::vector<float>& u = normed_input_row(ins.layer, 1, b);
            glu_chunk_step<float>(
                pair_count, m.d_model, u,
                [&](int64_t j) { return w1.row(ins.chunk.row_start + j); },
                [&](int64_t t) { return w2.row(ins.chunk2.row_start + t); },
                locals_[block].glu_acc[b]);
        }
    }

    void lmhead_chunk(int64_t block, const Instruction& ins) {
        const ModelConfig& m = plan_.model;
        check_x(m.layers > 0 ? 5 * m.layers - 1 : detail::kEpochInit, "lm head");
        for (int64_t b = 0; b < m.batch; ++b) {
            const std::vector<float>& u = normed_input_row(-1, 2, b);
            for (int64_t r = ins.chunk.row_start; r < ins.chunk.row_end; ++r) {
                const float* row = store_.lm_head.row(r);
                float acc = 0.0f;
                for (int64_t c = 0; c < m.d_model; ++c) acc += row[c] * u[c];
                locals_[block].out_rows.emplace_back(static_cast<int32_t>(b), r, acc);
            }
        }
    }

    // Barrier commit: apply every block's staged writes in block-id order.
    void commit(int64_t epoch) {
        const ModelConfig& m = plan_.model;
        const BarrierPoint& bp = plan_.barriers[epoch];

        if (m.kind == ModelKind::StackedLinear) {
            for (auto& loc : locals_) {
                for (auto& [b, r, v] : loc.out_rows) x_next_[b][r] = v;
                loc.out_rows.clear();
            }
            std::swap(x_, x_next_);
            x_epoch_ = epoch;
            return;
        }

        switch (bp.sublayer) {
            case Sublayer::Qkv: {
                const int64_t dh = m.d_head;
                const int64_t q_rows = m.n_q_heads * dh;
                const int64_t k_rows = m.n_kv_heads * dh;
                for (auto& loc : locals_) {
                    for (auto& [b, r, v] : loc.qkv_rows) {
                        if (r < q_rows) q_buf_[b][r] = v;
                        else if (r < q_rows + k_rows) k_cur_[b][r - q_rows] = v;
                        else v_cur_[b][r - q_rows - k_rows] = v;
                    }
                    loc.qkv_rows.clear();
                }
                store_.kv.append_token(bp.layer, k_cur_, v_cur_);
                q_layer_ = bp.layer;
                kv_appended_layer_ = bp.layer;
                // reset attention scratch for this layer
                for (auto& loc : locals_)
                    for (auto& p : loc.partials) p = PartialAttention<float>(m.d_head);
                for (auto& b : attn_out_) std::fill(b.begin(), b.end(), 0.0f);
                break;
            }
            case Sublayer::CoreAttn: {
                bool any_meta = false;
                for (int64_t blk = 0; blk < plan_.num_blocks; ++blk) {
                    auto& loc = locals_[blk];
                    if (!loc.meta.empty()) {
                        auto& dst = meta_buf_[blk];
                        dst.assign(plan_.attention.q_heads_per_group * m.batch, {0.0f, 0.0f});
                        for (auto& [ql, b, mm, ll] : loc.meta) dst[ql * m.batch + b] = {mm, ll};
                        loc.meta.clear();
                        any_meta = true;
                    }
                }
                if (any_meta) meta_layer_ = bp.layer;
                bool any_accum = false;
                for (int64_t blk = 0; blk < plan_.num_blocks; ++blk) {
                    auto& loc = locals_[blk];
                    if (!loc.stage_accumulate) continue;
                    any_accum = true;
                    int64_t head = plan_.attention.kv_head_of_block(blk);
                    for (int64_t ql = 0; ql < plan_.attention.q_heads_per_group; ++ql) {
                        int64_t q_head = plan_.attention.q_head_begin(head) + ql;
                        for (int64_t b = 0; b < m.batch; ++b) {
                            const auto& o = loc.rescaled[ql * m.batch + b];
                            for (int64_t d = 0; d < m.d_head; ++d)
                                attn_out_[b][q_head * m.d_head + d] += o[d];
                        }
                    }
                    loc.stage_accumulate = false;
                }
                if (any_accum) attn_layer_ = bp.layer;
                break;
            }
            case Sublayer::Aout: {
                for (auto& loc : locals_) {
                    for (auto& [b, r, v] : loc.resid_add) x_[b][r] += v;
                    loc.resid_add.clear();
                }
                x_epoch_ = epoch;
                norm_cache_layer_ = -2;
                break;
            }
            case Sublayer::Glu: {
                for (auto& loc : locals_) {
                    if (!loc.stage_glu) continue;
                    for (int64_t b = 0; b < m.batch; ++b) {
                        for (int64_t k = 0; k < m.d_model; ++k) x_[b][k] += loc.glu_acc[b][k];
                        std::fill(loc.glu_acc[b].begin(), loc.glu_acc[b].end(), 0.0f);
                    }
                    loc.stage_glu = false;
                }
                x_epoch_ = epoch;
                norm_cache_layer_ = -2;
                break;
            }
            case Sublayer::LmHead: {
                for (auto& loc : locals_) {
                    for (auto& [b, r, v] : loc.out_rows) logits_[b][r] = v;
                    loc.out_rows.clear();
                }
                break;
            }
            default: break;
        }
    }
};

// One decode step (llama) or one forward pass (stacked linear).
inline InterpreterResult execute_program(const std::vector<DeviceProgram>& programs,
                                         const WorkloadPlan& plan, TensorStore& store,
                                         const std::vector<int64_t>& tokens, int64_t pos) {
    return Interpreter(plan, programs, store).run(tokens, pos);
}

}  // namespace fusesim

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "fusesim/kernel_ir.hpp"
#include "fusesim/partition.hpp"

namespace fusesim {
namespace detail {

// Pipelined loads are scheduled against "fences": every barrier and launch
// marker bumps a counter. A unit's fence is where its consumer lives.
// Baseline and fused never issue a load past its fence; fused_overlap may
// issue across barriers (but order within a block never changes).
struct LoadUnit {
    ChunkDescriptor chunk;
    int32_t fence = 0;
    int32_t layer = -1;
    Sublayer sublayer = Sublayer::Linear;
    int32_t kv_head = -1;
    int32_t batch_row = -1;
};

struct EmitItem {
    Instruction ins;
    int32_t unit_a = -1;
    int32_t unit_b = -1;
};

class BlockEmitter {
public:
    BlockEmitter(const WorkloadPlan& plan, RunMode mode, int64_t block)
        : plan_(plan), mode_(mode), block_(block) {}

    DeviceProgram run() {
        build_items();
        return schedule();
    }

private:
    const WorkloadPlan& plan_;
    RunMode mode_;
    int64_t block_;
    std::vector<LoadUnit> units_;
    std::vector<EmitItem> items_;
    int32_t fence_ = 0;
    int32_t next_barrier_ = 0;
    int32_t next_launch_ = 0;

    Instruction base(OpCode op, int32_t layer, Sublayer sub) const {
        Instruction i;
        i.op = op;
        i.layer = layer;
        i.sublayer = sub;
        return i;
    }

    void push_marker(int32_t layer, Sublayer sub) {
        Instruction i = base(OpCode::LaunchMarker, layer, sub);
        i.launch_id = next_launch_++;
        items_.push_back({i, -1, -1});
        ++fence_;
    }
    void push_barrier(int32_t layer, Sublayer sub) {
        Instruction i = base(OpCode::GlobalBarrier, layer, sub);
        i.barrier_id = next_barrier_++;
        items_.push_back({i, -1, -1});
        ++fence_;
    }
    int32_t push_unit(const ChunkDescriptor& c, int32_t layer, Sublayer sub, int32_t kv_head = -1,
                      int32_t batch_row = -1) {
        units_.push_back({c, fence_, layer, sub, kv_head, batch_row});
        return static_cast<int32_t>(units_.size()) - 1;
    }
    void push_compute(ComputeKind kind, int32_t layer, Sublayer sub, int32_t ua, int32_t ub,
                      uint64_t cost, int32_t kv_head = -1, int32_t batch_row = -1) {
        Instruction i = base(OpCode::Compute, layer, sub);
        i.kind = kind;
        i.cost_elements = cost;
        i.kv_head = kv_head;
        i.batch_row = batch_row;
        if (ua >= 0) {
            i.chunk = units_[ua].chunk;
            i.has_chunk = true;
        }
        if (ub >= 0) {
            i.chunk2 = units_[ub].chunk;
            i.has_chunk2 = true;
        }
        items_.push_back({i, ua, ub});
    }
    void push_write(WriteTarget t, int32_t layer, Sublayer sub) {
        Instruction i = base(OpCode::WriteGlobal, layer, sub);
        i.target = t;
        items_.push_back({i, -1, -1});
    }
    void push_sync_load(int32_t layer, int32_t kv_head, uint64_t bytes) {
        Instruction i = base(OpCode::SyncLoadCurrentToken, layer, Sublayer::CoreAttn);
        i.kv_head = kv_head;
        i.sync_bytes = bytes;
        items_.push_back({i, -1, -1});
    }

    void matvec_epoch(const BlockAssignment& a, ComputeKind kind, WriteTarget target,
                      int32_t layer, Sublayer sub) {
        const auto& chunks = a.per_block[block_];
        if (mode_ == RunMode::Baseline) push_marker(layer, sub);
        for (const auto& c : chunks) {
            int32_t u = push_unit(c, layer, sub);
            push_compute(kind, layer, sub, u, -1,
                         static_cast<uint64_t>(c.elements()) * plan_.model.batch);
        }
        if (!chunks.empty()) push_write(target, layer, sub);
        push_barrier(layer, sub);
    }

    void build_items() {
        const ModelConfig& m = plan_.model;
        bool any_work = m.kind == ModelKind::LlamaDecoder || m.layers > 0;
        if (any_work && mode_ != RunMode::Baseline) {
            if (m.kind == ModelKind::StackedLinear) push_marker(0, Sublayer::Linear);
            else if (m.layers > 0) push_marker(0, Sublayer::Qkv);
            else push_marker(-1, Sublayer::LmHead);
        }

        if (m.kind == ModelKind::StackedLinear) {
            for (int32_t l = 0; l < m.layers; ++l)
                matvec_epoch(plan_.linear[l], ComputeKind::MatvecLinear, WriteTarget::LinearOut, l,
                             Sublayer::Linear);
            return;
        }

        const AttentionPartition& part = plan_.attention;
        bool participates = part.participates(block_);
        int32_t head = participates ? static_cast<int32_t>(part.kv_head_of_block(block_)) : -1;
        int64_t group_slot = participates ? part.group_slot_of_block(block_) : -1;
        int64_t qpg = part.q_heads_per_group;

        for (int32_t l = 0; l < m.layers; ++l) {
            matvec_epoch(plan_.qkv[l], ComputeKind::RmsnormMatvecQkv, WriteTarget::QkvAndCurrentKv,
                         l, Sublayer::Qkv);

            // Core attention, part 1: partials over the planned cache chunks
            // plus the synchronously loaded current token, then metadata.
            if (mode_ == RunMode::Baseline) push_marker(l, Sublayer::CoreAttn);
            if (participates) {
                if (group_slot == 0) {
                    uint64_t bytes = 2ull * m.d_head * dtype_bytes(m.dtype) *
                                     static_cast<uint64_t>(m.batch);
                    push_sync_load(l, head, bytes);
                    push_compute(ComputeKind::AttnCurrentToken, l, Sublayer::CoreAttn, -1, -1,
                                 static_cast<uint64_t>(2 * m.d_head * qpg * m.batch), head);
                }
                for (int32_t b = 0; b < m.batch; ++b) {
                    const KvLoadPlan& kp = plan_.kv_loads[l][b];
                    const auto& ks = kp.k_per_slot[group_slot];
                    const auto& vs = kp.v_per_slot[group_slot];
                    for (size_t j = 0; j < ks.size(); ++j) {
                        ChunkDescriptor ck = ks[j];
                        ChunkDescriptor cv = vs[j];
                        ck.matrix.kv_head = head;
                        cv.matrix.kv_head = head;
                        int32_t ua = push_unit(ck, l, Sublayer::CoreAttn, head, b);
                        int32_t ub = push_unit(cv, l, Sublayer::CoreAttn, head, b);
                        push_compute(ComputeKind::AttnQkPvPartial, l, Sublayer::CoreAttn, ua, ub,
                                     static_cast<uint64_t>(2 * ck.rows() * m.d_head * qpg), head,
                                     b);
                    }
                }
                push_compute(ComputeKind::AttnReduceMeta, l, Sublayer::CoreAttn, -1, -1,
                             static_cast<uint64_t>(qpg * m.batch), head);
                push_write(WriteTarget::AttnMeta, l, Sublayer::CoreAttn);
            }
            push_barrier(l, Sublayer::CoreAttn);

            // Core attention, part 2: global denominator, rescale, accumulate.
            if (participates) {
                push_compute(ComputeKind::AttnReduceRescale, l, Sublayer::CoreAttn, -1, -1,
                             static_cast<uint64_t>(qpg * (part.group_size + m.d_head) * m.batch),
                             head);
                push_compute(ComputeKind::AttnAccumulate, l, Sublayer::CoreAttn, -1, -1,
                             static_cast<uint64_t>(qpg * m.d_head * m.batch), head);
                push_write(WriteTarget::AttnOutAccum, l, Sublayer::CoreAttn);
            }
            push_barrier(l, Sublayer::CoreAttn);

            matvec_epoch(plan_.aout[l], ComputeKind::MatvecAout, WriteTarget::ResidualAout, l,
                         Sublayer::Aout);

            // GLU: paired in/gate and output-column chunks, no interior sync.
            if (mode_ == RunMode::Baseline) push_marker(l, Sublayer::Glu);
            const auto& f1 = plan_.ffn1[l].per_block[block_];
            const auto& f2 = plan_.ffn2[l].per_block[block_];
            for (size_t j = 0; j < f1.size(); ++j) {
                int32_t ua = push_unit(f1[j], l, Sublayer::Glu);
                int32_t ub = push_unit(f2[j], l, Sublayer::Glu);
                push_compute(ComputeKind::GluInGateSwigluOut, l, Sublayer::Glu, ua, ub,
                             static_cast<uint64_t>(f1[j].elements() + f2[j].elements()) *
                                 static_cast<uint64_t>(m.batch));
            }
            if (!f1.empty()) {
                push_compute(ComputeKind::GluReduce, l, Sublayer::Glu, -1, -1,
                             static_cast<uint64_t>(m.d_model * m.batch));
                push_write(WriteTarget::ResidualGlu, l, Sublayer::Glu);
            }
            push_barrier(l, Sublayer::Glu);
        }

        matvec_epoch(plan_.lmhead, ComputeKind::MatvecLmHead, WriteTarget::Logits, -1,
                     Sublayer::LmHead);
    }

    DeviceProgram schedule() {
        DeviceProgram prog;
        prog.block_id = static_cast<int32_t>(block_);
        prog.mode = mode_;
        prog.stage_size = plan_.pipeline.stage_size;
        prog.depth = plan_.pipeline.depth;
        prog.consumer_warps = plan_.pipeline.consumer_warps;
        prog.shared_footprint_bytes =
            shared_footprint(plan_.pipeline.stage_size, plan_.pipeline.depth, plan_.model);

        int64_t depth = plan_.pipeline.depth;
        std::vector<int32_t> slot_of(units_.size(), -1);
        std::vector<bool> busy(depth, false);
        size_t issued = 0;
        int32_t cur_fence = 0;
        const bool cross = mode_ == RunMode::FusedOverlap;
        auto& out = prog.instructions;

        auto pump = [&] {
            while (issued < units_.size()) {
                const LoadUnit& u = units_[issued];
                if (!cross && u.fence > cur_fence) break;
                int32_t s = -1;
                for (int32_t k = 0; k < depth; ++k)
                    if (!busy[k]) {
                        s = k;
                        break;
                    }
                if (s < 0) break;
                busy[s] = true;
                slot_of[issued] = s;
                Instruction i;
                i.op = OpCode::AsyncLoad;
                i.layer = u.layer;
                i.sublayer = u.sublayer;
                i.slot = s;
                i.chunk = u.chunk;
                i.has_chunk = true;
                i.hoisted = u.fence > cur_fence;
                i.fence_ahead = u.fence - cur_fence;
                i.kv_head = u.kv_head;
                i.batch_row = u.batch_row;
                out.push_back(i);
                ++issued;
            }
        };

        auto await_and_mark = [&](int32_t unit, int32_t layer, Sublayer sub) {
            if (slot_of[unit] < 0)
                throw SimError("emit: slot-pressure infeasibility (cannot schedule within depth)");
            Instruction i;
            i.op = OpCode::AwaitStage;
            i.layer = layer;
            i.sublayer = sub;
            i.slot = slot_of[unit];
            out.push_back(i);
        };
        auto release = [&](int32_t unit, int32_t layer, Sublayer sub) {
            Instruction i;
            i.op = OpCode::ReleaseStage;
            i.layer = layer;
            i.sublayer = sub;
            i.slot = slot_of[unit];
            out.push_back(i);
            busy[slot_of[unit]] = false;
        };

        pump();
        for (const EmitItem& item : items_) {
            if (item.ins.op == OpCode::GlobalBarrier || item.ins.op == OpCode::LaunchMarker) {
                out.push_back(item.ins);
                ++cur_fence;
                pump();
                continue;
            }
            if (item.ins.op == OpCode::Compute && item.unit_a >= 0) {
                await_and_mark(item.unit_a, item.ins.layer, item.ins.sublayer);
                if (item.unit_b >= 0) await_and_mark(item.unit_b, item.ins.layer, item.ins.sublayer);
                Instruction c = item.ins;
                c.slot = slot_of[item.unit_a];
                c.slot2 = item.unit_b >= 0 ? slot_of[item.unit_b] : -1;
                out.push_back(c);
                release(item.unit_a, item.ins.layer, item.ins.sublayer);
                if (item.unit_b >= 0) release(item.unit_b, item.ins.layer, item.ins.sublayer);
                pump();
                continue;
            }
            out.push_back(item.ins);
        }
        return prog;
    }
};

}  // namespace detail

// Lowers a plan into one program per thread block. Baseline splits execution
// into per-sublayer kernels (one launch marker each); fused and
// fused_overlap run everything behind a single launch, and fused_overlap
// additionally issues loads across barrier epochs up to the pipeline depth.
inline std::vector<DeviceProgram> emit_programs(const WorkloadPlan& plan, RunMode mode) {
    std::vector<DeviceProgram> programs;
    programs.reserve(plan.num_blocks);
    for (int64_t b = 0; b < plan.num_blocks; ++b)
        programs.push_back(detail::BlockEmitter(plan, mode, b).run());
    return programs;
}

}  // namespace fusesim

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sstream>
#include <string>

#include "fusesim/kernel_ir.hpp"
#include "fusesim/verify.hpp"

namespace fusesim {

// Deterministic line-oriented listing of one block's program. Format is
// stable and covered by golden tests; one instruction per line.
inline std::string render_listing(const DeviceProgram& p) {
    auto diags = verify_program(p);
    if (!diags.empty())
        throw VerifyError("render_listing: refusing to render unverified program: " +
                          to_string(diags.front()));

    std::ostringstream os;
    os << "# block " << p.block_id << " mode " << mode_name(p.mode) << " stage_size "
       << p.stage_size << " depth " << p.depth << "\n";

    auto chunk_ref = [](const ChunkDescriptor& c) {
        std::ostringstream s;
        s << "m=" << matrix_tag(c.matrix.kind);
        if (c.matrix.layer >= 0) s << " L=" << c.matrix.layer;
        if (c.matrix.kv_head >= 0) s << " h=" << c.matrix.kv_head;
        if (c.matrix.batch_row > 0) s << " b=" << c.matrix.batch_row;
        s << " c=" << c.chunk_index;
        return s.str();
    };

    for (const Instruction& ins : p.instructions) {
        switch (ins.op) {
            case OpCode::AsyncLoad:
                os << "async_load " << chunk_ref(ins.chunk) << " -> slot" << ins.slot;
                if (ins.hoisted) os << " hoisted";
                os << "\n";
                break;
            case OpCode::AwaitStage:
                os << "await slot" << ins.slot << "\n";
                break;
            case OpCode::Compute: {
                os << "compute ";
                if ((ins.has_chunk && ins.chunk.quantized) ||
                    (ins.has_chunk2 && ins.chunk2.quantized))
                    os << "dequant+";
                os << compute_kind_name(ins.kind);
                if (ins.slot >= 0) os << " slot" << ins.slot;
                if (ins.slot2 >= 0) os << " slot" << ins.slot2;
                if (!ins.has_chunk && ins.layer >= 0) os << " L=" << ins.layer;
                if (!ins.has_chunk && ins.kv_head >= 0) os << " h=" << ins.kv_head;
                os << "\n";
                break;
            }
            case OpCode::ReleaseStage:
                os << "release slot" << ins.slot << "\n";
                break;
            case OpCode::GlobalBarrier:
                os << "barrier " << ins.barrier_id << "\n";
                break;
            case OpCode::SyncLoadCurrentToken:
                os << "sync_load_current L=" << ins.layer << " h=" << ins.kv_head << "\n";
                break;
            case OpCode::WriteGlobal:
                os << "write " << write_target_name(ins.target);
                if (ins.layer >= 0) os << " L=" << ins.layer;
                os << "\n";
                break;
            case OpCode::LaunchMarker:
                os << "launch " << ins.launch_id << "\n";
                break;
        }
    }
    return os.str();
}

}  // namespace fusesim

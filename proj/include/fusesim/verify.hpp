// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "fusesim/kernel_ir.hpp"

namespace fusesim {

struct Diagnostic {
    int32_t block = -1;
    size_t instr_index = 0;
    std::string code;    // stable identifier, e.g. "use-before-ready"
    std::string detail;  // human-readable context
};

inline std::string to_string(const Diagnostic& d) {
    std::ostringstream os;
    os << "block " << d.block << " @" << d.instr_index << ": " << d.code;
    if (!d.detail.empty()) os << " (" << d.detail << ")";
    return os.str();
}

// Local invariants of one block's program: slot life cycle, chunk identity,
// outstanding-stage bound, strictly increasing barrier ids.
inline std::vector<Diagnostic> verify_program(const DeviceProgram& p) {
    std::vector<Diagnostic> diags;
    enum class SlotState : uint8_t { Free, Loading, Ready };
    std::vector<SlotState> state(p.depth, SlotState::Free);
    std::vector<ChunkDescriptor> slot_chunk(p.depth);
    auto diag = [&](size_t i, const std::string& code, const std::string& detail) {
        diags.push_back(Diagnostic{p.block_id, i, code, detail});
    };
    auto slot_ok = [&](int32_t s) { return s >= 0 && s < p.depth; };

    int64_t outstanding = 0;
    int32_t last_barrier = -1;
    for (size_t i = 0; i < p.instructions.size(); ++i) {
        const Instruction& ins = p.instructions[i];
        switch (ins.op) {
            case OpCode::AsyncLoad: {
                if (!slot_ok(ins.slot)) {
                    diag(i, "slot overflow", "slot id outside pipeline depth");
                    break;
                }
                if (state[ins.slot] != SlotState::Free) {
                    diag(i, "slot overflow", "async_load onto an occupied slot");
                    break;
                }
                state[ins.slot] = SlotState::Loading;
                slot_chunk[ins.slot] = ins.chunk;
                if (++outstanding > p.depth)
                    diag(i, "slot overflow", "more outstanding stages than pipeline depth");
                break;
            }
            case OpCode::AwaitStage: {
                if (!slot_ok(ins.slot) || state[ins.slot] != SlotState::Loading) {
                    diag(i, "use-before-ready", "await on a slot with no load in flight");
                    break;
                }
                state[ins.slot] = SlotState::Ready;
                break;
            }
            case OpCode::Compute: {
                auto check = [&](int32_t s, const ChunkDescriptor& c, bool has) {
                    if (!has) return;
                    if (!slot_ok(s) || state[s] != SlotState::Ready) {
                        diag(i, "use-before-ready", "compute on a slot that was not awaited");
                        return;
                    }
                    if (!(slot_chunk[s].matrix == c.matrix) ||
                        slot_chunk[s].byte_offset != c.byte_offset ||
                        slot_chunk[s].byte_len != c.byte_len)
                        diag(i, "chunk-mismatch", "compute consumes a chunk not loaded in its slot");
                };
                check(ins.slot, ins.chunk, ins.has_chunk);
                check(ins.slot2, ins.chunk2, ins.has_chunk2);
                break;
            }
            case OpCode::ReleaseStage: {
                if (!slot_ok(ins.slot) || state[ins.slot] == SlotState::Free) {
                    diag(i, "release-unheld", "release of a free slot");
                    break;
                }
                state[ins.slot] = SlotState::Free;
                --outstanding;
                break;
            }
            case OpCode::GlobalBarrier: {
                if (ins.barrier_id <= last_barrier)
                    diag(i, "barrier-order", "barrier ids must strictly increase");
                last_barrier = ins.barrier_id;
                break;
            }
            default: break;
        }
    }
    return diags;
}

// Whole-emission check: local invariants per block plus identical barrier and
// launch-marker sequences across all blocks.
inline std::vector<Diagnostic> verify_programs(const std::vector<DeviceProgram>& programs) {
    std::vector<Diagnostic> diags;
    for (const auto& p : programs) {
        auto local = verify_program(p);
        diags.insert(diags.end(), local.begin(), local.end());
    }
    if (programs.empty()) return diags;

    auto sync_sequence = [](const DeviceProgram& p) {
        std::vector<std::pair<char, int32_t>> seq;
        for (const auto& ins : p.instructions) {
            if (ins.op == OpCode::GlobalBarrier) seq.emplace_back('b', ins.barrier_id);
            if (ins.op == OpCode::LaunchMarker) seq.emplace_back('l', ins.launch_id);
        }
        return seq;
    };
    auto ref = sync_sequence(programs.front());
    for (size_t b = 1; b < programs.size(); ++b) {
        if (sync_sequence(programs[b]) != ref)
            diags.push_back(Diagnostic{programs[b].block_id, 0, "barrier mismatch",
                                       "synchronization sequence differs from block 0"});
    }
    return diags;
}

}  // namespace fusesim

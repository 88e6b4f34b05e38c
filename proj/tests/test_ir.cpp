// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <fstream>

#include "fusesim/emit.hpp"
#include "fusesim/listing.hpp"
#include "fusesim/presets.hpp"
#include "fusesim/verify.hpp"

using namespace fusesim;

namespace {

WorkloadPlan toy_plan(int64_t seq_len = 300, uint64_t stage = 32768, int64_t depth = 3) {
    ModelConfig m = model_preset("llama31_8b-toy");
    HardwareConfig hw = hardware_preset("h100_sxm");
    PipelineConfig pipe;
    pipe.stage_size = stage;
    pipe.depth = depth;
    return build_plan(m, hw, pipe, seq_len);
}

WorkloadPlan stacked_plan(const char* preset, int64_t layers) {
    ModelConfig m = model_preset(preset);
    m.layers = layers;
    HardwareConfig hw = hardware_preset("h100_sxm");
    return build_plan(m, hw, PipelineConfig{}, 0);
}

int count_markers(const DeviceProgram& p) {
    int n = 0;
    for (const auto& i : p.instructions)
        if (i.op == OpCode::LaunchMarker) ++n;
    return n;
}

// Multiset signature of a program with scheduling metadata erased.
std::vector<std::string> normalized_multiset(const DeviceProgram& p) {
    std::vector<std::string> sig;
    for (auto ins : p.instructions) {
        ins.hoisted = false;
        ins.fence_ahead = 0;
        std::ostringstream os;
        os << static_cast<int>(ins.op) << "|" << static_cast<int>(ins.kind) << "|" << ins.layer
           << "|" << static_cast<int>(ins.sublayer) << "|" << ins.slot << "|" << ins.slot2 << "|"
           << matrix_tag(ins.chunk.matrix.kind) << "|" << ins.chunk.byte_offset << "|"
           << ins.chunk.byte_len << "|" << ins.chunk2.byte_offset << "|" << ins.barrier_id << "|"
           << ins.launch_id << "|" << ins.chunk.matrix.layer << "|" << ins.chunk.matrix.kv_head
           << "|" << ins.batch_row;
        sig.push_back(os.str());
    }
    std::sort(sig.begin(), sig.end());
    return sig;
}

}  // namespace

TEST_CASE("baseline stacked linear carries one launch marker per layer") {
    WorkloadPlan plan = stacked_plan("stacked_linear_2k", 32);
    auto programs = emit_programs(plan, RunMode::Baseline);
    for (const auto& p : programs) CHECK(count_markers(p) == 32);
    auto fused = emit_programs(plan, RunMode::Fused);
    for (const auto& p : fused) CHECK(count_markers(p) == 1);
}

TEST_CASE("emitted programs pass verification in every mode") {
    WorkloadPlan plan = toy_plan();
    for (RunMode mode : {RunMode::Baseline, RunMode::Fused, RunMode::FusedOverlap}) {
        auto programs = emit_programs(plan, mode);
        CHECK(verify_programs(programs).empty());
    }
}

TEST_CASE("slot occupancy never exceeds the pipeline depth") {
    for (int64_t depth : {2, 3, 4}) {
        WorkloadPlan plan = toy_plan(300, 16384, depth);
        for (RunMode mode : {RunMode::Baseline, RunMode::Fused, RunMode::FusedOverlap}) {
            auto programs = emit_programs(plan, mode);
            for (const auto& p : programs) {
                int64_t outstanding = 0, peak = 0;
                for (const auto& ins : p.instructions) {
                    if (ins.op == OpCode::AsyncLoad) peak = std::max(peak, ++outstanding);
                    if (ins.op == OpCode::ReleaseStage) --outstanding;
                }
                CHECK(peak <= depth);
            }
        }
    }
}

TEST_CASE("fused_overlap hoists next-layer loads before the current layer ends") {
    WorkloadPlan plan = stacked_plan("stacked_linear_4k", 4);
    auto programs = emit_programs(plan, RunMode::FusedOverlap);
    // In every block, the first load of layer 1 appears before the final
    // release belonging to layer 0.
    for (const auto& p : programs) {
        if (p.instructions.empty()) continue;
        int64_t first_l1_load = -1, last_l0_release = -1;
        for (size_t i = 0; i < p.instructions.size(); ++i) {
            const auto& ins = p.instructions[i];
            if (ins.op == OpCode::AsyncLoad && ins.chunk.matrix.layer == 1 && first_l1_load < 0)
                first_l1_load = static_cast<int64_t>(i);
            if (ins.op == OpCode::ReleaseStage && ins.layer == 0)
                last_l0_release = static_cast<int64_t>(i);
        }
        if (first_l1_load < 0) continue;  // block had no layer-1 work
        CHECK(first_l1_load < last_l0_release);
    }
    // And fused does not hoist: no load crosses a barrier.
    auto fused = emit_programs(plan, RunMode::Fused);
    for (const auto& p : fused)
        for (const auto& ins : p.instructions)
            if (ins.op == OpCode::AsyncLoad) CHECK_FALSE(ins.hoisted);
}

TEST_CASE("single-sublayer programs are identical across modes up to markers") {
    WorkloadPlan plan = stacked_plan("stacked_linear_2k", 1);
    auto base = emit_programs(plan, RunMode::Baseline);
    auto fused = emit_programs(plan, RunMode::Fused);
    for (size_t b = 0; b < base.size(); ++b)
        CHECK(normalized_multiset(base[b]) == normalized_multiset(fused[b]));
}

TEST_CASE("erasing the overlap schedule recovers the fused instruction multiset") {
    WorkloadPlan plan = toy_plan();
    auto fused = emit_programs(plan, RunMode::Fused);
    auto overlap = emit_programs(plan, RunMode::FusedOverlap);
    for (size_t b = 0; b < fused.size(); ++b)
        CHECK(normalized_multiset(fused[b]) == normalized_multiset(overlap[b]));
}

TEST_CASE("verifier flags use-before-ready") {
    DeviceProgram p;
    p.block_id = 0;
    p.depth = 2;
    Instruction load;
    load.op = OpCode::AsyncLoad;
    load.slot = 0;
    load.has_chunk = true;
    Instruction compute;
    compute.op = OpCode::Compute;
    compute.kind = ComputeKind::MatvecLinear;
    compute.slot = 0;
    compute.chunk = load.chunk;
    compute.has_chunk = true;
    p.instructions = {load, compute};  // no await
    auto diags = verify_program(p);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].code == "use-before-ready");
}

TEST_CASE("verifier flags barrier mismatches across blocks") {
    auto mk_barrier = [](int32_t id) {
        Instruction i;
        i.op = OpCode::GlobalBarrier;
        i.barrier_id = id;
        return i;
    };
    DeviceProgram a, b;
    a.block_id = 0;
    b.block_id = 1;
    a.depth = b.depth = 2;
    a.instructions = {mk_barrier(1), mk_barrier(2), mk_barrier(3)};
    b.instructions = {mk_barrier(1), mk_barrier(3)};
    auto diags = verify_programs({a, b});
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].code == "barrier mismatch");
    CHECK(diags[0].block == 1);
}

TEST_CASE("verifier flags slot overflow") {
    DeviceProgram p;
    p.block_id = 0;
    p.depth = 2;
    Instruction l0;
    l0.op = OpCode::AsyncLoad;
    l0.slot = 0;
    Instruction l0_again = l0;  // same slot, never released
    p.instructions = {l0, l0_again};
    auto diags = verify_program(p);
    REQUIRE_FALSE(diags.empty());
    CHECK(diags[0].code == "slot overflow");
}

TEST_CASE("renderer refuses unverified programs") {
    DeviceProgram p;
    p.depth = 2;
    Instruction await;
    await.op = OpCode::AwaitStage;
    await.slot = 0;
    p.instructions = {await};
    CHECK_THROWS_AS(render_listing(p), VerifyError);
}

TEST_CASE("listing format is pinned and deterministic") {
    WorkloadPlan plan = toy_plan(300);
    auto programs = emit_programs(plan, RunMode::Fused);
    std::string text = render_listing(programs[0]);
    CHECK(text == render_listing(programs[0]));

    // Pinned line shapes.
    CHECK(text.find("async_load m=qkv L=0 c=0 -> slot0") != std::string::npos);
    CHECK(text.find("barrier 0") != std::string::npos);
    CHECK(text.find("launch 0") != std::string::npos);
    CHECK(text.find("compute rmsnorm_matvec_qkv slot0") != std::string::npos);
    CHECK(text.find("write qkv L=0") != std::string::npos);
}

TEST_CASE("listing golden file stays stable") {
    ModelConfig m = model_preset("llama31_8b-toy");
    m.layers = 1;
    HardwareConfig hw = hardware_preset("h100_sxm");
    PipelineConfig pipe;
    pipe.stage_size = 32768;
    WorkloadPlan plan = build_plan(m, hw, pipe, 300);
    auto programs = emit_programs(plan, RunMode::Fused);
    std::string text = render_listing(programs[0]);

    std::ifstream in(std::string(FUSESIM_TEST_DIR) + "/golden/toy_block0_fused.txt",
                     std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    CHECK(text == ss.str());
}

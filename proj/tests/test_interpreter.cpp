// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "fusesim/interpreter.hpp"
#include "fusesim/presets.hpp"
#include "fusesim/reference.hpp"
#include "fusesim/verify.hpp"

using namespace fusesim;

namespace {

// Seeded synthetic history: fills the cache with plausible K/V content and
// sets every layer's length, standing in for a real prefill phase.
void synthetic_prefill(TensorStore& st, int64_t prefill, uint64_t seed) {
    const ModelConfig& m = st.model;
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 0.3f);
    std::vector<float> k(m.d_head), v(m.d_head);
    for (int64_t b = 0; b < m.batch; ++b)
        for (int64_t l = 0; l < m.layers; ++l)
            for (int64_t h = 0; h < m.n_kv_heads; ++h)
                for (int64_t p = 0; p < prefill; ++p) {
                    for (auto& x : k) x = dist(rng);
                    for (auto& x : v) x = dist(rng);
                    st.kv.set_position(b, l, h, p, k.data(), v.data());
                }
    for (int64_t l = 0; l < m.layers; ++l) st.kv.set_length(l, prefill);
}

double rel_err(const std::vector<float>& got, const std::vector<double>& want) {
    double scale = 0;
    for (double w : want) scale = std::max(scale, std::abs(w));
    if (scale == 0) scale = 1;
    double err = 0;
    for (size_t i = 0; i < got.size(); ++i)
        err = std::max(err, std::abs(static_cast<double>(got[i]) - want[i]) / scale);
    return err;
}

WorkloadPlan toy_plan(const ModelConfig& m, int64_t seq_len) {
    HardwareConfig hw = hardware_preset("h100_sxm");
    PipelineConfig pipe;
    pipe.stage_size = 32768;
    return build_plan(m, hw, pipe, seq_len);
}

}  // namespace

TEST_CASE("interpreted logits match the dense oracle across prefills and modes") {
    ModelConfig m = model_preset("llama31_8b-toy");
    for (int64_t prefill : {0, 1, 255, 256, 300}) {
        TensorStore ref_store = init_weights(m, 42, prefill + 4);
        synthetic_prefill(ref_store, prefill, 7);
        std::vector<int64_t> tokens = {17};
        auto want = reference_forward(ref_store, tokens, prefill);

        WorkloadPlan plan = toy_plan(m, prefill);
        for (RunMode mode : {RunMode::Baseline, RunMode::Fused, RunMode::FusedOverlap}) {
            auto programs = emit_programs(plan, mode);
            REQUIRE(verify_programs(programs).empty());
            TensorStore st = init_weights(m, 42, prefill + 4);
            synthetic_prefill(st, prefill, 7);
            auto got = execute_program(programs, plan, st, tokens, prefill);
            CHECK(rel_err(got.logits[0], want[0]) < 1e-4);
            CHECK(st.kv.length(0) == prefill + 1);
        }
    }
}

TEST_CASE("all modes agree bit for bit") {
    ModelConfig m = model_preset("llama31_8b-toy");
    const int64_t prefill = 300;
    WorkloadPlan plan = toy_plan(m, prefill);
    std::vector<std::vector<float>> outs;
    for (RunMode mode : {RunMode::Baseline, RunMode::Fused, RunMode::FusedOverlap}) {
        auto programs = emit_programs(plan, mode);
        TensorStore st = init_weights(m, 9, prefill + 4);
        synthetic_prefill(st, prefill, 5);
        outs.push_back(execute_program(programs, plan, st, {3}, prefill).logits[0]);
    }
    CHECK(outs[0] == outs[1]);
    CHECK(outs[1] == outs[2]);
}

TEST_CASE("zero weights give zero logits") {
    ModelConfig m = model_preset("llama31_8b-toy");
    TensorStore st = init_weights(m, 1, 8);
    for (auto& lw : st.layers) {
        std::fill(lw.wqkv.values.begin(), lw.wqkv.values.end(), 0.0f);
        std::fill(lw.waout.values.begin(), lw.waout.values.end(), 0.0f);
        std::fill(lw.wffn1.values.begin(), lw.wffn1.values.end(), 0.0f);
        std::fill(lw.wffn2t.values.begin(), lw.wffn2t.values.end(), 0.0f);
    }
    std::fill(st.lm_head.values.begin(), st.lm_head.values.end(), 0.0f);
    WorkloadPlan plan = toy_plan(m, 0);
    auto programs = emit_programs(plan, RunMode::Fused);
    auto got = execute_program(programs, plan, st, {5}, 0);
    for (float v : got.logits[0]) CHECK(v == 0.0f);
}

TEST_CASE("zeroed projections reduce to lm_head of the normalized embedding") {
    ModelConfig m = model_preset("llama31_8b-toy");
    m.layers = 1;
    TensorStore st = init_weights(m, 2, 8);
    std::fill(st.layers[0].waout.values.begin(), st.layers[0].waout.values.end(), 0.0f);
    std::fill(st.layers[0].wffn2t.values.begin(), st.layers[0].wffn2t.values.end(), 0.0f);

    WorkloadPlan plan = toy_plan(m, 0);
    auto programs = emit_programs(plan, RunMode::Fused);
    TensorStore st2 = init_weights(m, 2, 8);
    std::fill(st2.layers[0].waout.values.begin(), st2.layers[0].waout.values.end(), 0.0f);
    std::fill(st2.layers[0].wffn2t.values.begin(), st2.layers[0].wffn2t.values.end(), 0.0f);
    auto got = execute_program(programs, plan, st2, {17}, 0);

    // Residual passes through unchanged, so logits = lm_head . finalnorm(embedding).
    const float* e = st.embedding.row(17);
    std::vector<float> x(e, e + m.d_model);
    auto u = rmsnorm(x, st.final_norm, static_cast<float>(m.rmsnorm_eps));
    for (int64_t r = 0; r < 8; ++r) {
        const float* row = st.lm_head.row(r);
        double acc = 0;
        for (int64_t c = 0; c < m.d_model; ++c) acc += static_cast<double>(row[c]) * u[c];
        CHECK(got.logits[0][r] == Catch::Approx(acc).epsilon(1e-4).margin(1e-5));
    }
}

TEST_CASE("identical batch rows produce identical outputs") {
    ModelConfig m = model_preset("llama31_8b-toy");
    m.batch = 2;
    TensorStore st = init_weights(m, 21, 40);
    synthetic_prefill(st, 33, 3);
    // Duplicate batch row 0's cache into row 1.
    for (int64_t l = 0; l < m.layers; ++l)
        for (int64_t h = 0; h < m.n_kv_heads; ++h)
            for (int64_t p = 0; p < 33; ++p)
                st.kv.set_position(1, l, h, p, st.kv.k_at(0, l, h, p), st.kv.v_at(0, l, h, p));

    WorkloadPlan plan = toy_plan(m, 33);
    auto programs = emit_programs(plan, RunMode::FusedOverlap);
    auto got = execute_program(programs, plan, st, {11, 11}, 33);
    CHECK(got.logits[0] == got.logits[1]);
}

TEST_CASE("stacked linear interpretation matches the serial oracle") {
    ModelConfig m = model_preset("stacked_linear_2k");
    m.layers = 4;
    m.d_model = 256;
    TensorStore st = init_weights(m, 31, 1);
    std::mt19937 rng(77);
    std::normal_distribution<float> dist(0, 1);
    for (auto& x : st.residual[0]) x = dist(rng);
    auto want = reference_linear_forward(st);

    HardwareConfig hw = hardware_preset("h100_sxm");
    WorkloadPlan plan = build_plan(m, hw, PipelineConfig{}, 0);
    for (RunMode mode : {RunMode::Baseline, RunMode::Fused, RunMode::FusedOverlap}) {
        auto programs = emit_programs(plan, mode);
        TensorStore st2 = init_weights(m, 31, 1);
        st2.residual = st.residual;
        auto got = execute_program(programs, plan, st2, {}, 0);
        CHECK(rel_err(got.logits[0], want[0]) < 1e-4);
    }
}

TEST_CASE("reads before the writer's barrier are memory-order violations") {
    ModelConfig m = model_preset("llama31_8b-toy");
    m.layers = 1;
    WorkloadPlan plan = toy_plan(m, 0);
    auto programs = emit_programs(plan, RunMode::Fused);

    // Move a core-attention compute of block 0 into the qkv epoch, ahead of
    // the barrier that publishes q.
    auto& ins = programs[0].instructions;
    size_t barrier_pos = 0, attn_pos = 0;
    for (size_t i = 0; i < ins.size(); ++i) {
        if (ins[i].op == OpCode::GlobalBarrier && ins[i].barrier_id == 0) barrier_pos = i;
        if (ins[i].op == OpCode::Compute && ins[i].kind == ComputeKind::AttnCurrentToken) {
            attn_pos = i;
            break;
        }
    }
    REQUIRE(attn_pos > barrier_pos);
    Instruction moved = ins[attn_pos];
    ins.erase(ins.begin() + attn_pos);
    ins.insert(ins.begin() + barrier_pos, moved);

    TensorStore st = init_weights(m, 1, 4);
    CHECK_THROWS_WITH(execute_program(programs, plan, st, {0}, 0),
                      Catch::Matchers::ContainsSubstring("memory-order violation"));
}

TEST_CASE("decode determinism: same store, token and position give same logits") {
    ModelConfig m = model_preset("llama31_8b-toy");
    WorkloadPlan plan = toy_plan(m, 5);
    auto programs = emit_programs(plan, RunMode::Fused);
    std::vector<float> a, b;
    for (int round = 0; round < 2; ++round) {
        TensorStore st = init_weights(m, 4, 8);
        synthetic_prefill(st, 5, 2);
        auto got = execute_program(programs, plan, st, {9}, 5);
        (round == 0 ? a : b) = got.logits[0];
    }
    CHECK(a == b);
}

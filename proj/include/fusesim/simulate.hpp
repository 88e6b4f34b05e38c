// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include "fusesim/cost_model.hpp"
#include "fusesim/kernel_ir.hpp"

namespace fusesim {

// ---------------------------------------------------------------------------
// Discrete-event performance model.
//
// Loads are fluid flows sharing global bandwidth: every in-flight flow f
// receives rate peak * efficiency(f) / N, recomputed at each event. Flows
// issued ahead of their home barrier epoch (fused_overlap hoisting) run in a
// background tier that only consumes bandwidth while no same-epoch flow is
// active, so overlap fills barrier and compute-tail gaps and can never slow
// the foreground schedule down. Compute serializes per block; barriers join
// all blocks at the slowest arrival plus a fixed latency; launch markers
// join, drain and charge the kernel launch overhead.
// ---------------------------------------------------------------------------

struct TimelineEntry {
    int32_t block = 0;
    double t0 = 0, t1 = 0;
    std::string kind;
};

struct SimResult {
    double total_latency = 0;
    uint64_t bytes_moved = 0;
    double achieved_bandwidth = 0;
    double barrier_stall_total = 0;
    double launch_overhead_total = 0;
    int64_t num_launches = 0;
    int64_t num_flows = 0;
    std::map<std::string, double> sublayer_latency;
    double tokens_per_second = 0;  // filled by decode predictions
    std::vector<TimelineEntry> timeline;
};

struct SimOptions {
    bool record_timeline = false;
};

namespace detail {

struct Flow {
    double remaining_z = 0;  // bytes / (peak * eff), normalized transfer time
    double eff = 1.0;
    uint64_t bytes = 0;
    int64_t activation_sync = 0;  // foreground once this many syncs completed
    int32_t waiter = -1;          // block waiting on completion, if any
    double waiter_floor = 0;      // block local time at suspension
    double extra_latency = 0;     // added to the waiter's clock (sync loads)
    double completion_time = -1;
    double bg_v0 = 0;  // background virtual progress at insertion
    bool started = false;
    bool done = false;
    bool in_fg = false;
};

// One bandwidth tier: all member flows progress at the same normalized rate
// 1/N, so completions pop off a min-heap keyed by virtual progress.
struct FluidTier {
    std::priority_queue<std::pair<double, int64_t>, std::vector<std::pair<double, int64_t>>,
                        std::greater<>>
        heap;  // (z_insert + V_at_insert, flow)
    double V = 0;     // virtual progress
    int64_t n = 0;    // active member count

    void insert(int64_t fid, double z) {
        heap.emplace(z + V, fid);
        ++n;
    }
    void advance(double dt) {
        if (n > 0) V += dt / static_cast<double>(n);
    }
};

struct BlockSim {
    size_t pc = 0;
    double t = 0;
    int64_t sync_seen = 0;
    std::vector<int64_t> slot_flow;
    bool finished = false;
    bool waiting = false;
};

struct SyncJoin {
    int64_t arrived = 0;
    double max_arrival = 0;
    bool is_launch = false;
    int32_t barrier_id = -1;
    Sublayer sublayer = Sublayer::Linear;
    int32_t layer = -1;
    bool released = false;
};

}  // namespace detail

class Simulator {
public:
    Simulator(const std::vector<DeviceProgram>& programs, const CostModel& cost,
              SimOptions options = {})
        : programs_(programs), cost_(cost), options_(options) {
        cost_.validate();
    }

    SimResult run() {
        const int64_t nb = static_cast<int64_t>(programs_.size());
        blocks_.assign(nb, {});
        for (int64_t b = 0; b < nb; ++b)
            blocks_[b].slot_flow.assign(std::max<int64_t>(programs_[b].depth, 1), -1);

        for (int64_t b = 0; b < nb; ++b) walk(b);

        while (true) {
            double t_start = pending_starts_.empty() ? kInf : pending_starts_.top().first;
            double t_sync = pending_releases_.empty() ? kInf : pending_releases_.top().first;
            double t_comp = next_completion_time();
            double t_next = std::min({t_start, t_sync, t_comp});
            if (t_next == kInf) break;

            advance_to(t_next);
            // Fixed precedence at equal times keeps runs deterministic.
            if (t_start <= t_sync && t_start <= t_comp) {
                auto [t, fid] = pending_starts_.top();
                pending_starts_.pop();
                start_flow(fid);
            } else if (t_sync <= t_comp) {
                auto [t, idx] = pending_releases_.top();
                pending_releases_.pop();
                release_sync(idx, t);
            } else {
                complete_one_flow(t_next);
            }
        }

        for (int64_t b = 0; b < nb; ++b)
            if (!blocks_[b].finished) report_deadlock();

        SimResult res;
        for (const auto& blk : blocks_) res.total_latency = std::max(res.total_latency, blk.t);
        res.bytes_moved = bytes_moved_;
        res.achieved_bandwidth =
            res.total_latency > 0 ? static_cast<double>(bytes_moved_) / res.total_latency : 0.0;
        res.barrier_stall_total = barrier_stall_;
        res.launch_overhead_total = launch_total_;
        res.num_launches = num_launches_;
        res.num_flows = static_cast<int64_t>(flows_.size());
        double prev = 0;
        for (const auto& [id, rel] : barrier_release_) {
            res.sublayer_latency[rel.first] += rel.second - prev;
            prev = rel.second;
        }
        res.timeline = std::move(timeline_);
        return res;
    }

private:
    static constexpr double kInf = std::numeric_limits<double>::infinity();

    const std::vector<DeviceProgram>& programs_;
    CostModel cost_;
    SimOptions options_;

    std::vector<detail::BlockSim> blocks_;
    std::vector<detail::Flow> flows_;
    detail::FluidTier fg_, bg_;
    std::priority_queue<std::pair<double, int64_t>, std::vector<std::pair<double, int64_t>>,
                        std::greater<>>
        pending_starts_;  // (time, flow)
    std::priority_queue<std::pair<double, int64_t>, std::vector<std::pair<double, int64_t>>,
                        std::greater<>>
        pending_releases_;  // (time, sync index)
    std::map<int64_t, detail::SyncJoin> joins_;
    std::map<int32_t, std::pair<std::string, double>> barrier_release_;
    std::map<int64_t, std::vector<int64_t>> bg_queue_;  // activation -> flow ids

    double now_ = 0;
    int64_t completed_syncs_ = 0;
    uint64_t bytes_moved_ = 0;
    double barrier_stall_ = 0;
    double launch_total_ = 0;
    int64_t num_launches_ = 0;
    std::vector<TimelineEntry> timeline_;

    void note(int32_t block, double t0, double t1, const char* kind) {
        if (options_.record_timeline && t1 > t0)
            timeline_.push_back(TimelineEntry{block, t0, t1, kind});
    }

    // --- fluid tiers ---------------------------------------------------

    void advance_to(double t) {
        double dt = t - now_;
        if (dt > 0) {
            if (fg_.n > 0) fg_.advance(dt);
            else bg_.advance(dt);
        }
        now_ = t;
    }

    double next_completion_time() {
        auto peek = [&](detail::FluidTier& tier) -> double {
            while (!tier.heap.empty()) {
                auto [zp, fid] = tier.heap.top();
                const detail::Flow& f = flows_[fid];
                if (f.done || f.in_fg != (&tier == &fg_)) {
                    tier.heap.pop();
                    continue;
                }
                return now_ + std::max(0.0, zp - tier.V) * static_cast<double>(tier.n);
            }
            return kInf;
        };
        if (fg_.n > 0) return peek(fg_);
        if (bg_.n > 0) return peek(bg_);
        return kInf;
    }

    void complete_one_flow(double t) {
        detail::FluidTier& tier = fg_.n > 0 ? fg_ : bg_;
        while (!tier.heap.empty()) {
            auto [zp, fid] = tier.heap.top();
            detail::Flow& f = flows_[fid];
            if (f.done || f.in_fg != (&tier == &fg_)) {
                tier.heap.pop();
                continue;
            }
            tier.heap.pop();
            f.done = true;
            f.completion_time = t;
            --tier.n;
            if (f.waiter >= 0) {
                int32_t b = f.waiter;
                f.waiter = -1;
                note(b, f.waiter_floor, t, "stall:load");
                blocks_[b].t = std::max(blocks_[b].t, t) + f.extra_latency;
                blocks_[b].waiting = false;
                walk(b);
            }
            return;
        }
        throw SimError("simulate: internal error, completion event without an active flow");
    }

    int64_t create_flow(uint64_t bytes, double eff, int64_t activation) {
        detail::Flow f;
        f.bytes = bytes;
        f.eff = eff;
        f.remaining_z = static_cast<double>(bytes) / (cost_.peak_bandwidth * eff);
        f.activation_sync = activation;
        flows_.push_back(f);
        bytes_moved_ += bytes;
        return static_cast<int64_t>(flows_.size()) - 1;
    }

    void start_flow(int64_t fid) {
        detail::Flow& f = flows_[fid];
        f.started = true;
        if (completed_syncs_ >= f.activation_sync) {
            f.in_fg = true;
            fg_.insert(fid, f.remaining_z);
        } else {
            f.in_fg = false;
            f.bg_v0 = bg_.V;
            bg_.insert(fid, f.remaining_z);
            bg_queue_[f.activation_sync].push_back(fid);
        }
    }

    void promote_flows() {
        // Move ripe background flows to the foreground with their residue.
        while (!bg_queue_.empty() && bg_queue_.begin()->first <= completed_syncs_) {
            for (int64_t fid : bg_queue_.begin()->second) {
                detail::Flow& f = flows_[fid];
                if (f.done || f.in_fg) continue;
                double z_left = std::max(0.0, f.remaining_z - (bg_.V - f.bg_v0));
                f.in_fg = true;
                --bg_.n;
                fg_.insert(fid, z_left);
            }
            bg_queue_.erase(bg_queue_.begin());
        }
    }

    void release_sync(int64_t idx, double t) {
        detail::SyncJoin& j = joins_[idx];
        j.released = true;
        if (j.is_launch) {
            launch_total_ += cost_.kernel_launch_overhead;
            ++num_launches_;
        } else {
            barrier_release_[j.barrier_id] = {sublayer_name(j.sublayer), t};
        }
        ++completed_syncs_;
        promote_flows();
        for (size_t b = 0; b < blocks_.size(); ++b) {
            detail::BlockSim& blk = blocks_[b];
            if (blk.waiting && blk.sync_seen == idx + 1) {
                note(static_cast<int32_t>(b), blk.t, t, j.is_launch ? "stall:launch" : "stall:barrier");
                barrier_stall_ += t - blk.t;
                blk.t = t;
                blk.waiting = false;
                walk(static_cast<int64_t>(b));
            }
        }
    }

    [[noreturn]] void report_deadlock() const {
        std::string msg = "simulate: deadlock detected; stuck blocks:";
        for (size_t b = 0; b < blocks_.size(); ++b) {
            if (blocks_[b].finished) continue;
            msg += " block " + std::to_string(b) + " at instruction " +
                   std::to_string(blocks_[b].pc) + ";";
        }
        throw SimError(msg);
    }

    void walk(int64_t b) {
        detail::BlockSim& blk = blocks_[b];
        const auto& ins = programs_[b].instructions;
        while (blk.pc < ins.size()) {
            const Instruction& I = ins[blk.pc];
            switch (I.op) {
                case OpCode::AsyncLoad: {
                    blk.t += cost_.load_issue_cost;
                    int64_t fid = create_flow(I.chunk.byte_len, cost_.efficiency(I.chunk),
                                              blk.sync_seen + I.fence_ahead);
                    blk.slot_flow[I.slot] = fid;
                    pending_starts_.emplace(blk.t, fid);
                    ++blk.pc;
                    break;
                }
                case OpCode::AwaitStage: {
                    int64_t fid = blk.slot_flow[I.slot];
                    if (fid < 0)
                        throw SimError("simulate: block " + std::to_string(b) +
                                       " awaits an empty slot (emitter bug)");
                    detail::Flow& f = flows_[fid];
                    if (f.done) {
                        note(static_cast<int32_t>(b), blk.t, f.completion_time, "stall:load");
                        blk.t = std::max(blk.t, f.completion_time);
                        ++blk.pc;
                        break;
                    }
                    f.waiter = static_cast<int32_t>(b);
                    f.waiter_floor = blk.t;
                    blk.waiting = true;
                    ++blk.pc;
                    return;
                }
                case OpCode::Compute: {
                    double dur =
                        cost_.compute_seconds(I.cost_elements, programs_[b].consumer_warps);
                    if (I.has_chunk && I.chunk.quantized)
                        dur += static_cast<double>(I.chunk.elements()) *
                               cost_.dequant_cost_per_element;
                    if (I.has_chunk2 && I.chunk2.quantized)
                        dur += static_cast<double>(I.chunk2.elements()) *
                               cost_.dequant_cost_per_element;
                    note(static_cast<int32_t>(b), blk.t, blk.t + dur, compute_kind_name(I.kind));
                    blk.t += dur;
                    ++blk.pc;
                    break;
                }
                case OpCode::ReleaseStage:
                    blk.slot_flow[I.slot] = -1;
                    ++blk.pc;
                    break;
                case OpCode::WriteGlobal:
                    ++blk.pc;
                    break;
                case OpCode::SyncLoadCurrentToken: {
                    int64_t fid =
                        create_flow(I.sync_bytes, cost_.eff_kv_attention, blk.sync_seen);
                    detail::Flow& f = flows_[fid];
                    f.extra_latency = cost_.sync_load_latency;
                    f.waiter = static_cast<int32_t>(b);
                    f.waiter_floor = blk.t;
                    pending_starts_.emplace(blk.t, fid);
                    blk.waiting = true;
                    ++blk.pc;
                    return;
                }
                case OpCode::GlobalBarrier:
                case OpCode::LaunchMarker: {
                    int64_t idx = blk.sync_seen;
                    detail::SyncJoin& j = joins_[idx];
                    if (j.arrived == 0) {
                        j.is_launch = I.op == OpCode::LaunchMarker;
                        j.barrier_id = I.barrier_id;
                        j.sublayer = I.sublayer;
                        j.layer = I.layer;
                    }
                    ++j.arrived;
                    j.max_arrival = std::max(j.max_arrival, blk.t);
                    blk.waiting = true;
                    blk.sync_seen = idx + 1;
                    ++blk.pc;
                    if (j.arrived == static_cast<int64_t>(blocks_.size())) {
                        double latency =
                            j.is_launch ? cost_.kernel_launch_overhead : cost_.barrier_latency;
                        pending_releases_.emplace(j.max_arrival + latency, idx);
                    }
                    return;
                }
            }
        }
        blk.finished = true;
    }
};

inline SimResult simulate(const std::vector<DeviceProgram>& programs, const CostModel& cost,
                          SimOptions options = {}) {
    return Simulator(programs, cost, options).run();
}

}  // namespace fusesim

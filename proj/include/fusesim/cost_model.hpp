// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <sstream>

#include "fusesim/config.hpp"
#include "fusesim/partition.hpp"

namespace fusesim {

// Bandwidth efficiency classes. Weight-matvec streams (projections, stacked
// linear layers, the vocabulary head) run near the machine's large-transfer
// efficiency; cache-bound core attention has more logic and synchronization
// per byte and lands much lower; GLU streams run hot.
enum class LoadKindClass : uint8_t { WeightMatvec, KvAttention, Glu };

inline LoadKindClass load_class_of(const ChunkDescriptor& c) {
    switch (c.matrix.kind) {
        case MatrixKind::Wffn1:
        case MatrixKind::Wffn2: return LoadKindClass::Glu;
        case MatrixKind::KCache:
        case MatrixKind::VCache: return LoadKindClass::KvAttention;
        default: return LoadKindClass::WeightMatvec;
    }
}

struct CostModel {
    double peak_bandwidth = 3.35e12;  // bytes/s

    // efficiency map: fraction of peak achievable per load class
    double eff_weight_matvec = 0.80;
    double eff_kv_attention = 0.50;
    double eff_glu = 0.90;
    // fitted per-dimension overrides for the weight-matvec class, keyed by
    // the chunk's logical row length
    std::map<int64_t, double> eff_weight_matvec_by_dim;

    // per-chunk compute cost parameters
    double compute_throughput_per_sm = 8e10;  // elements/s at the reference warp count
    double consumer_warp_ref = 8.0;

    double kernel_launch_overhead = 8e-6;
    double barrier_latency = 3e-7;
    double sync_load_latency = 5e-7;
    double dequant_cost_per_element = 5e-12;
    double load_issue_cost = 5e-8;  // per-async-load pipeline management cost

    static CostModel from_hardware(const HardwareConfig& hw) {
        CostModel c;
        c.peak_bandwidth = hw.peak_bandwidth;
        c.kernel_launch_overhead = hw.kernel_launch_overhead;
        c.barrier_latency = hw.barrier_latency;
        c.compute_throughput_per_sm = hw.compute_throughput_per_sm;
        return c;
    }

    void validate() const {
        auto frac = [](double e) { return e > 0.0 && e <= 1.0; };
        if (peak_bandwidth <= 0) throw ValidationError("cost: peak_bandwidth must be positive");
        if (!frac(eff_weight_matvec) || !frac(eff_kv_attention) || !frac(eff_glu))
            throw ValidationError("cost: efficiencies must be in (0, 1]");
        for (const auto& [d, e] : eff_weight_matvec_by_dim)
            if (!frac(e))
                throw ValidationError("cost: per-dim efficiency out of (0, 1] at dim " +
                                      std::to_string(d));
        if (compute_throughput_per_sm <= 0 || consumer_warp_ref <= 0)
            throw ValidationError("cost: compute throughput parameters must be positive");
        if (kernel_launch_overhead < 0 || barrier_latency < 0 || sync_load_latency < 0 ||
            dequant_cost_per_element < 0 || load_issue_cost < 0)
            throw ValidationError("cost: per-event costs must be >= 0");
    }

    double efficiency(LoadKindClass cls, int64_t dim) const {
        switch (cls) {
            case LoadKindClass::KvAttention: return eff_kv_attention;
            case LoadKindClass::Glu: return eff_glu;
            case LoadKindClass::WeightMatvec: {
                auto it = eff_weight_matvec_by_dim.find(dim);
                return it != eff_weight_matvec_by_dim.end() ? it->second : eff_weight_matvec;
            }
        }
        return eff_weight_matvec;
    }

    double efficiency(const ChunkDescriptor& c) const {
        return efficiency(load_class_of(c), c.cols);
    }

    double max_efficiency() const {
        double e = std::max(eff_weight_matvec, std::max(eff_kv_attention, eff_glu));
        for (const auto& [_, v] : eff_weight_matvec_by_dim) e = std::max(e, v);
        return e;
    }

    double compute_seconds(uint64_t elements, int64_t consumer_warps) const {
        double rate =
            compute_throughput_per_sm * (static_cast<double>(consumer_warps) / consumer_warp_ref);
        return static_cast<double>(elements) / rate;
    }
};

// [cost] section in the structured-text format; per-dim overrides use
// `eff_weight_matvec@<dim>` keys.
inline std::string serialize(const CostModel& c) {
    using detail::real_str;
    std::ostringstream os;
    os << "[cost]\n";
    os << "peak_bandwidth = " << real_str(c.peak_bandwidth) << "\n";
    os << "eff_weight_matvec = " << real_str(c.eff_weight_matvec) << "\n";
    os << "eff_kv_attention = " << real_str(c.eff_kv_attention) << "\n";
    os << "eff_glu = " << real_str(c.eff_glu) << "\n";
    for (const auto& [d, e] : c.eff_weight_matvec_by_dim)
        os << "eff_weight_matvec@" << d << " = " << real_str(e) << "\n";
    os << "compute_throughput_per_sm = " << real_str(c.compute_throughput_per_sm) << "\n";
    os << "consumer_warp_ref = " << real_str(c.consumer_warp_ref) << "\n";
    os << "kernel_launch_overhead = " << real_str(c.kernel_launch_overhead) << "\n";
    os << "barrier_latency = " << real_str(c.barrier_latency) << "\n";
    os << "sync_load_latency = " << real_str(c.sync_load_latency) << "\n";
    os << "dequant_cost_per_element = " << real_str(c.dequant_cost_per_element) << "\n";
    os << "load_issue_cost = " << real_str(c.load_issue_cost) << "\n";
    return os.str();
}

inline CostModel parse_cost_model(const std::string& text) {
    using namespace detail;
    IniDoc doc = parse_ini(text);
    auto it = doc.find("cost");
    if (it == doc.end()) throw ParseError("cost model: missing [cost] section");
    CostModel c;
    for (const auto& [k, v] : it->second) {
        if (k == "peak_bandwidth") c.peak_bandwidth = to_real(v, k);
        else if (k == "eff_weight_matvec") c.eff_weight_matvec = to_real(v, k);
        else if (k == "eff_kv_attention") c.eff_kv_attention = to_real(v, k);
        else if (k == "eff_glu") c.eff_glu = to_real(v, k);
        else if (k.rfind("eff_weight_matvec@", 0) == 0)
            c.eff_weight_matvec_by_dim[to_count(k.substr(18), k)] = to_real(v, k);
        else if (k == "compute_throughput_per_sm") c.compute_throughput_per_sm = to_real(v, k);
        else if (k == "consumer_warp_ref") c.consumer_warp_ref = to_real(v, k);
        else if (k == "kernel_launch_overhead") c.kernel_launch_overhead = to_real(v, k);
        else if (k == "barrier_latency") c.barrier_latency = to_real(v, k);
        else if (k == "sync_load_latency") c.sync_load_latency = to_real(v, k);
        else if (k == "dequant_cost_per_element") c.dequant_cost_per_element = to_real(v, k);
        else if (k == "load_issue_cost") c.load_issue_cost = to_real(v, k);
        else throw ParseError("cost model: unknown field '" + k + "'");
    }
    c.validate();
    return c;
}

inline CostModel load_cost_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cost model: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_cost_model(ss.str());
}

}  // namespace fusesim

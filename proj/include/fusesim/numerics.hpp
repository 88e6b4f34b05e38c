// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fusesim/types.hpp"

namespace fusesim {

// y_k = w_k * x_k / sqrt(mean(x^2) + eps)
template <typename Real>
std::vector<Real> rmsnorm(const std::vector<Real>& x, const std::vector<Real>& w, Real eps) {
    if (x.size() != w.size()) throw ValidationError("rmsnorm: length mismatch");
    Real ms = 0;
    for (Real v : x) ms += v * v;
    ms /= static_cast<Real>(x.size());
    Real inv = Real(1) / std::sqrt(ms + eps);
    std::vector<Real> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = w[i] * x[i] * inv;
    return y;
}

// Pairwise rotation of adjacent elements (2k, 2k+1) by pos * theta^(-2k/d).
template <typename Real>
void rope_rotate_inplace(Real* v, int64_t d_head, int64_t pos, Real theta) {
    for (int64_t k = 0; k < d_head / 2; ++k) {
        Real freq = std::pow(theta, -Real(2 * k) / Real(d_head));
        Real angle = Real(pos) * freq;
        Real c = std::cos(angle), s = std::sin(angle);
        Real a = v[2 * k], b = v[2 * k + 1];
        v[2 * k] = a * c - b * s;
        v[2 * k + 1] = a * s + b * c;
    }
}

template <typename Real>
std::vector<Real> rope_rotate(std::vector<Real> v, int64_t pos, Real theta) {
    if (v.size() % 2 != 0) throw ValidationError("rope_rotate: d_head must be even");
    rope_rotate_inplace(v.data(), static_cast<int64_t>(v.size()), pos, theta);
    return v;
}

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }

// out_k = silu(gate_k) * in_k
template <typename Real>
std::vector<Real> swiglu_combine(const std::vector<Real>& g_in, const std::vector<Real>& g_gate) {
    if (g_in.size() != g_gate.size()) throw ValidationError("swiglu_combine: length mismatch");
    std::vector<Real> out(g_in.size());
    for (size_t i = 0; i < g_in.size(); ++i)
        out[i] = static_cast<Real>(silu(static_cast<double>(g_gate[i]))) * g_in[i];
    return out;
}

// ---------------------------------------------------------------------------
// Online-softmax partial attention state: running max logit m, local
// denominator l, and the unnormalized accumulator o = sum e^{s_j - m} v_j.
// Chunks may arrive in any order; the reduction below recombines partials
// from different blocks exactly.
// ---------------------------------------------------------------------------
template <typename Real>
struct PartialAttention {
    Real m = -std::numeric_limits<Real>::infinity();
    Real l = 0;
    std::vector<Real> o;

    explicit PartialAttention(int64_t d_head = 0) : o(d_head, Real(0)) {}
    bool empty() const { return l == Real(0); }
};

// Folds one chunk of (K, V) rows into the state. `logit(j)` must return the
// raw dot product q . k_j for chunk-local row j; `value(j)` the row of V.
template <typename Real, typename LogitFn, typename ValueFn>
void attn_partial_update(PartialAttention<Real>& st, int64_t rows, Real alpha, LogitFn&& logit,
                         ValueFn&& value) {
    if (rows == 0) return;
    int64_t d = static_cast<int64_t>(st.o.size());
    Real chunk_max = -std::numeric_limits<Real>::infinity();
    std::vector<Real> s(rows);
    for (int64_t j = 0; j < rows; ++j) {
        s[j] = alpha * logit(j);
        chunk_max = std::max(chunk_max, s[j]);
    }
    Real m_new = std::max(st.m, chunk_max);
    Real scale = st.empty() ? Real(0) : std::exp(st.m - m_new);
    st.l *= scale;
    for (int64_t k = 0; k < d; ++k) st.o[k] *= scale;
    for (int64_t j = 0; j < rows; ++j) {
        Real w = std::exp(s[j] - m_new);
        st.l += w;
        const auto* v = value(j);
        for (int64_t k = 0; k < d; ++k) st.o[k] += w * static_cast<Real>(v[k]);
    }
    st.m = m_new;
}

// Convenience overload over dense chunk arrays (rows x d_head).
template <typename Real>
PartialAttention<Real> attn_partial(const std::vector<Real>& q,
                                    const std::vector<std::vector<Real>>& k_rows,
                                    const std::vector<std::vector<Real>>& v_rows,
                                    PartialAttention<Real> st, Real alpha) {
    int64_t rows = static_cast<int64_t>(k_rows.size());
    attn_partial_update(
        st, rows, alpha,
        [&](int64_t j) {
            Real dot = 0;
            for (size_t k = 0; k < q.size(); ++k) dot += q[k] * k_rows[j][k];
            return dot;
        },
        [&](int64_t j) { return v_rows[j].data(); });
    return st;
}

// Three-stage combination of per-block partials:
//   (1) publish (m_b, l_b); (2) each block computes the global maximum M and
//   denominator L = sum l_b e^{m_b - M} and rescales its o_b by e^{m_b - M}/L;
//   (3) the rescaled outputs are summed. Equivalent to rescaling normalized
//   outputs by the denominator ratio.
template <typename Real>
std::vector<Real> attn_reduce(const std::vector<PartialAttention<Real>>& partials) {
    Real M = -std::numeric_limits<Real>::infinity();
    bool any = false;
    for (const auto& p : partials)
        if (!p.empty()) {
            M = std::max(M, p.m);
            any = true;
        }
    if (!any) throw ValidationError("attn_reduce: all partials empty");
    Real L = 0;
    for (const auto& p : partials)
        if (!p.empty()) L += p.l * std::exp(p.m - M);
    size_t d = 0;
    for (const auto& p : partials) d = std::max(d, p.o.size());
    std::vector<Real> out(d, Real(0));
    for (const auto& p : partials) {
        if (p.empty()) continue;
        Real r = std::exp(p.m - M) / L;
        for (size_t k = 0; k < p.o.size(); ++k) out[k] += r * p.o[k];
    }
    return out;
}

// One GLU chunk: in/gate rows of the first projection produce activations
// that immediately multiply the paired output-projection columns; the result
// accumulates into a block-local d_model vector, no global writes.
//   acc += W2cols^T . swiglu(Win_rows . input, Wgate_rows . input)
template <typename Real, typename RowFn, typename ColFn>
void glu_chunk_step(int64_t pair_count, int64_t d_model, const std::vector<Real>& input,
                    RowFn&& in_gate_row, ColFn&& out_col, std::vector<Real>& acc) {
    for (int64_t t = 0; t < pair_count; ++t) {
        const auto* in_row = in_gate_row(2 * t);
        const auto* gate_row = in_gate_row(2 * t + 1);
        Real a = 0, g = 0;
        for (int64_t c = 0; c < static_cast<int64_t>(input.size()); ++c) {
            a += static_cast<Real>(in_row[c]) * input[c];
            g += static_cast<Real>(gate_row[c]) * input[c];
        }
        Real h = static_cast<Real>(silu(static_cast<double>(g))) * a;
        const auto* col = out_col(t);
        for (int64_t k = 0; k < d_model; ++k) acc[k] += h * static_cast<Real>(col[k]);
    }
}

// Greedy decoding: argmax with lowest-index tie break.
template <typename Real>
int64_t argmax_token(const std::vector<Real>& logits) {
    int64_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = static_cast<int64_t>(i);
    return best;
}

}  // namespace fusesim

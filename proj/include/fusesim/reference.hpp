// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "fusesim/numerics.hpp"
#include "fusesim/tensor_store.hpp"

namespace fusesim {

// Dense decode oracle: straightforward per-layer evaluation with
// double-precision accumulation and no chunking. Deliberately shares no code
// with the device-program path beyond the store itself.

namespace detail {

inline std::vector<double> widen(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

inline std::vector<double> matvec_rows(const Matrix& w, const std::vector<double>& u) {
    std::vector<double> y(w.rows, 0.0);
    for (int64_t r = 0; r < w.rows; ++r) {
        const float* row = w.row(r);
        double acc = 0.0;
        for (int64_t c = 0; c < w.cols; ++c) acc += static_cast<double>(row[c]) * u[c];
        y[r] = acc;
    }
    return y;
}

}  // namespace detail

// One decode step for every batch row. Appends the current token's K/V to
// the cache (position `pos` must equal the cache length) and returns the
// logits per batch row.
inline std::vector<std::vector<double>> reference_forward(TensorStore& store,
                                                          const std::vector<int64_t>& tokens,
                                                          int64_t pos) {
    const ModelConfig& m = store.model;
    if (m.kind != ModelKind::LlamaDecoder)
        throw ValidationError("reference_forward: decoder models only");
    if (static_cast<int64_t>(tokens.size()) != m.batch)
        throw ValidationError("reference_forward: one token per batch row required");

    const int64_t dh = m.d_head;
    const int64_t qpg = m.q_group();
    const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<std::vector<double>> x(m.batch);
    for (int64_t b = 0; b < m.batch; ++b) {
        if (tokens[b] < 0 || tokens[b] >= m.vocab_size)
            throw ValidationError("reference_forward: token id out of range");
        const float* row = store.embedding.row(tokens[b]);
        x[b].assign(row, row + m.d_model);
    }

    for (int64_t l = 0; l < m.layers; ++l) {
        const LayerWeights& lw = store.layers[l];
        if (store.kv.length(l) != pos)
            throw ValidationError("reference_forward: cache length does not match position");

        std::vector<std::vector<float>> k_rows(m.batch), v_rows(m.batch);
        std::vector<std::vector<double>> q(m.batch);
        for (int64_t b = 0; b < m.batch; ++b) {
            std::vector<double> u =
                rmsnorm(x[b], detail::widen(lw.norm_attn), static_cast<double>(m.rmsnorm_eps));
            std::vector<double> qkv = detail::matvec_rows(lw.wqkv, u);
            q[b].assign(qkv.begin(), qkv.begin() + m.n_q_heads * dh);
            for (int64_t h = 0; h < m.n_q_heads; ++h)
                rope_rotate_inplace(q[b].data() + h * dh, dh, pos, m.rope_theta);
            k_rows[b].resize(m.n_kv_heads * dh);
            v_rows[b].resize(m.n_kv_heads * dh);
            for (int64_t h = 0; h < m.n_kv_heads; ++h) {
                double* k = qkv.data() + (m.n_q_heads + h) * dh;
                rope_rotate_inplace(k, dh, pos, m.rope_theta);
                for (int64_t d = 0; d < dh; ++d) {
                    k_rows[b][h * dh + d] = static_cast<float>(k[d]);
                    v_rows[b][h * dh + d] =
                        static_cast<float>(qkv[(m.n_q_heads + m.n_kv_heads + h) * dh + d]);
                }
            }
        }
        store.kv.append_token(l, k_rows, v_rows);

        // Monolithic softmax attention per query head over positions [0, pos].
        for (int64_t b = 0; b < m.batch; ++b) {
            std::vector<double> attn_out(m.n_q_heads * dh, 0.0);
            for (int64_t h = 0; h < m.n_q_heads; ++h) {
                int64_t kvh = h / qpg;
                const double* qh = q[b].data() + h * dh;
                int64_t n = pos + 1;
                std::vector<double> s(n);
                double mx = -std::numeric_limits<double>::infinity();
                for (int64_t j = 0; j < n; ++j) {
                    const float* kj = store.kv.k_at(b, l, kvh, j);
                    double dot = 0;
                    for (int64_t d = 0; d < dh; ++d) dot += qh[d] * static_cast<double>(kj[d]);
                    s[j] = alpha * dot;
                    mx = std::max(mx, s[j]);
                }
                double denom = 0;
                for (int64_t j = 0; j < n; ++j) denom += std::exp(s[j] - mx);
                for (int64_t j = 0; j < n; ++j) {
                    double w = std::exp(s[j] - mx) / denom;
                    const float* vj = store.kv.v_at(b, l, kvh, j);
                    for (int64_t d = 0; d < dh; ++d)
                        attn_out[h * dh + d] += w * static_cast<double>(vj[d]);
                }
            }
            std::vector<double> aout = detail::matvec_rows(lw.waout, attn_out);
            for (int64_t k = 0; k < m.d_model; ++k) x[b][k] += aout[k];

            std::vector<double> u2 =
                rmsnorm(x[b], detail::widen(lw.norm_ffn), static_cast<double>(m.rmsnorm_eps));
            for (int64_t t = 0; t < m.d_inter; ++t) {
                const float* in_row = lw.wffn1.row(2 * t);
                const float* gate_row = lw.wffn1.row(2 * t + 1);
                double a = 0, g = 0;
                for (int64_t c = 0; c < m.d_model; ++c) {
                    a += static_cast<double>(in_row[c]) * u2[c];
                    g += static_cast<double>(gate_row[c]) * u2[c];
                }
                double h = silu(g) * a;
                const float* col = lw.wffn2t.row(t);
                for (int64_t k = 0; k < m.d_model; ++k)
                    x[b][k] += h * static_cast<double>(col[k]);
            }
        }
    }

    std::vector<std::vector<double>> logits(m.batch);
    for (int64_t b = 0; b < m.batch; ++b) {
        std::vector<double> u =
            rmsnorm(x[b], detail::widen(store.final_norm), static_cast<double>(m.rmsnorm_eps));
        logits[b] = detail::matvec_rows(store.lm_head, u);
    }
    return logits;
}

// Serial evaluation of a stacked-linear model on the store's residual input.
inline std::vector<std::vector<double>> reference_linear_forward(const TensorStore& store) {
    const ModelConfig& m = store.model;
    if (m.kind != ModelKind::StackedLinear)
        throw ValidationError("reference_linear_forward: stacked_linear models only");
    std::vector<std::vector<double>> x(m.batch);
    for (int64_t b = 0; b < m.batch; ++b) x[b] = detail::widen(store.residual[b]);
    for (int64_t l = 0; l < m.layers; ++l)
        for (int64_t b = 0; b < m.batch; ++b)
            x[b] = detail::matvec_rows(store.linear_layers[l], x[b]);
    return x;
}

}  // namespace fusesim

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fusesim/config.hpp"
#include "fusesim/quant.hpp"

namespace fusesim {

// ---------------------------------------------------------------------------
// Matrix: row-major logical values (always f32 in memory) plus the byte
// layout implied by dtype/quantization. For quantized matrices `values`
// holds the dequantized grid points, so every consumer sees identical
// numbers; the codes are kept for round-trip checks.
// ---------------------------------------------------------------------------
struct Matrix {
    std::string name;
    int64_t rows = 0;
    int64_t cols = 0;
    DType dtype = DType::BF16;
    bool quantized = false;
    int64_t quant_group = 0;
    std::vector<float> values;

    uint64_t row_bytes() const {
        if (quantized) return quant_row_bytes(cols, quant_group);
        return static_cast<uint64_t>(cols) * dtype_bytes(dtype);
    }
    uint64_t byte_size() const { return row_bytes() * static_cast<uint64_t>(rows); }
    int64_t elements() const { return rows * cols; }

    const float* row(int64_t r) const { return values.data() + r * cols; }
    float* row(int64_t r) { return values.data() + r * cols; }
};

// Byte layout of a matrix without materializing its values. Enough to do all
// chunking and accounting for models too large to allocate.
struct MatrixMeta {
    MatrixId id;
    int64_t rows = 0;
    int64_t cols = 0;
    DType dtype = DType::BF16;
    bool quantized = false;
    int64_t quant_group = 0;

    uint64_t row_bytes() const {
        if (quantized) return quant_row_bytes(cols, quant_group);
        return static_cast<uint64_t>(cols) * dtype_bytes(dtype);
    }
    uint64_t byte_size() const { return row_bytes() * static_cast<uint64_t>(rows); }
};

// ---------------------------------------------------------------------------
// KV cache: per (batch row, layer, kv head), K and V as seq x d_head arrays.
// Keys are stored post-rotation. Values are rounded to the cache dtype on
// append.
// ---------------------------------------------------------------------------
class KVCache {
public:
    KVCache() = default;
    KVCache(const ModelConfig& m, int64_t max_seq_len)
        : batch_(m.batch),
          layers_(m.layers),
          kv_heads_(m.n_kv_heads),
          d_head_(m.d_head),
          max_seq_len_(max_seq_len),
          dtype_(m.dtype),
          len_(m.layers, 0),
          k_(total_slots(), 0.0f),
          v_(total_slots(), 0.0f) {}

    int64_t length(int64_t layer) const { return len_[layer]; }
    int64_t max_seq_len() const { return max_seq_len_; }

    // Appends one position for every kv head of one (batch row, layer).
    // k/v are n_kv_heads * d_head, head-major.
    void append(int64_t batch_row, int64_t layer, const std::vector<float>& k,
                const std::vector<float>& v) {
        if (static_cast<int64_t>(k.size()) != kv_heads_ * d_head_ ||
            static_cast<int64_t>(v.size()) != kv_heads_ * d_head_)
            throw ValidationError("kv_append: vector length must be n_kv_heads * d_head");
        if (layer < 0 || layer >= layers_) throw ValidationError("kv_append: bad layer");
        int64_t pos = len_[layer];
        if (pos >= max_seq_len_)
            throw ValidationError("kv_append: cache capacity reached (max_seq_len)");
        for (int64_t h = 0; h < kv_heads_; ++h) {
            float* kd = k_slot(batch_row, layer, h, pos);
            float* vd = v_slot(batch_row, layer, h, pos);
            for (int64_t d = 0; d < d_head_; ++d) {
                kd[d] = round_store(k[h * d_head_ + d]);
                vd[d] = round_store(v[h * d_head_ + d]);
            }
        }
    }

    // Batched append: advances the layer length once after all rows land.
    void append_token(int64_t layer, const std::vector<std::vector<float>>& k_rows,
                      const std::vector<std::vector<float>>& v_rows) {
        for (int64_t b = 0; b < batch_; ++b) append(b, layer, k_rows[b], v_rows[b]);
        len_[layer] += 1;
    }

    // Test/synthetic-prefill access: writes directly and adjusts length.
    void set_position(int64_t batch_row, int64_t layer, int64_t head, int64_t pos,
                      const float* k, const float* v) {
        float* kd = k_slot(batch_row, layer, head, pos);
        float* vd = v_slot(batch_row, layer, head, pos);
        for (int64_t d = 0; d < d_head_; ++d) {
            kd[d] = round_store(k[d]);
            vd[d] = round_store(v[d]);
        }
    }
    void set_length(int64_t layer, int64_t n) { len_[layer] = n; }

    const float* k_at(int64_t batch_row, int64_t layer, int64_t head, int64_t pos) const {
        return const_cast<KVCache*>(this)->k_slot(batch_row, layer, head, pos);
    }
    const float* v_at(int64_t batch_row, int64_t layer, int64_t head, int64_t pos) const {
        return const_cast<KVCache*>(this)->v_slot(batch_row, layer, head, pos);
    }

    int64_t d_head() const { return d_head_; }
    DType dtype() const { return dtype_; }

private:
    int64_t batch_ = 0, layers_ = 0, kv_heads_ = 0, d_head_ = 0, max_seq_len_ = 0;
    DType dtype_ = DType::BF16;
    std::vector<int64_t> len_;
    std::vector<float> k_, v_;

    size_t total_slots() const {
        return static_cast<size_t>(batch_) * layers_ * kv_heads_ * max_seq_len_ * d_head_;
    }
    float* k_slot(int64_t b, int64_t l, int64_t h, int64_t pos) {
        size_t idx = (((static_cast<size_t>(b) * layers_ + l) * kv_heads_ + h) * max_seq_len_ + pos) *
                     d_head_;
        return k_.data() + idx;
    }
    float* v_slot(int64_t b, int64_t l, int64_t h, int64_t pos) {
        size_t idx = (((static_cast<size_t>(b) * layers_ + l) * kv_heads_ + h) * max_seq_len_ + pos) *
                     d_head_;
        return v_.data() + idx;
    }
    float round_store(float x) const { return dtype_ == DType::BF16 ? bf16_round(x) : x; }
};

struct LayerWeights {
    Matrix wqkv;    // (n_q*d_head + 2*n_kv*d_head) x d_model
    Matrix waout;   // d_model x d_model
    Matrix wffn1;   // 2*d_inter x d_model, rows interleaved: even=in, odd=gate
    Matrix wffn2t;  // d_inter x d_model (the output projection, stored transposed)
    std::vector<float> norm_attn;  // d_model
    std::vector<float> norm_ffn;   // d_model
};

// ---------------------------------------------------------------------------
// Layout of all streamed matrices for a model. The chunk planner works from
// this; the value-carrying store below matches it exactly.
// ---------------------------------------------------------------------------
struct StoreLayout {
    ModelConfig model;
    std::vector<MatrixMeta> streamed;  // chunk-scheduled weights, in schedule order

    // Weight bytes that the partitioner must cover exactly once.
    uint64_t streamed_weight_bytes() const {
        uint64_t total = 0;
        for (const auto& m : streamed) total += m.byte_size();
        return total;
    }

    // Whole-store footprint: streamed weights plus embedding table and
    // norm vectors (loaded by lookup/replication, not chunk-streamed).
    uint64_t total_weight_bytes() const {
        uint64_t total = streamed_weight_bytes();
        uint64_t eb = dtype_bytes(model.dtype);
        if (model.kind == ModelKind::LlamaDecoder) {
            total += static_cast<uint64_t>(model.vocab_size) * model.d_model * eb;  // embedding
            total += static_cast<uint64_t>(2 * model.layers + 1) * model.d_model * eb;  // norms
        }
        return total;
    }

    uint64_t kv_bytes_per_position() const {
        if (model.kind != ModelKind::LlamaDecoder) return 0;
        return static_cast<uint64_t>(model.batch) * model.layers * model.n_kv_heads * 2 *
               model.d_head * dtype_bytes(model.dtype);
    }
};

inline MatrixMeta weight_meta(const ModelConfig& m, MatrixKind kind, int32_t layer) {
    MatrixMeta meta;
    meta.id = MatrixId{layer, kind};
    meta.dtype = m.dtype;
    if (m.quant && kind != MatrixKind::Linear) {
        meta.quantized = true;
        meta.quant_group = m.quant->group_size;
    }
    switch (kind) {
        case MatrixKind::Wqkv: meta.rows = m.qkv_rows(); meta.cols = m.d_model; break;
        case MatrixKind::Waout: meta.rows = m.d_model; meta.cols = m.d_model; break;
        case MatrixKind::Wffn1: meta.rows = 2 * m.d_inter; meta.cols = m.d_model; break;
        case MatrixKind::Wffn2: meta.rows = m.d_inter; meta.cols = m.d_model; break;
        case MatrixKind::LmHead: meta.rows = m.vocab_size; meta.cols = m.d_model; break;
        case MatrixKind::Linear:
            meta.rows = m.d_model; meta.cols = m.d_model; meta.quantized = false; break;
        default: throw ValidationError("weight_meta: not a weight matrix");
    }
    return meta;
}

inline StoreLayout store_layout(const ModelConfig& m) {
    m.validate();
    StoreLayout lay;
    lay.model = m;
    if (m.kind == ModelKind::StackedLinear) {
        for (int32_t l = 0; l < m.layers; ++l)
            lay.streamed.push_back(weight_meta(m, MatrixKind::Linear, l));
        return lay;
    }
    for (int32_t l = 0; l < m.layers; ++l) {
        lay.streamed.push_back(weight_meta(m, MatrixKind::Wqkv, l));
        lay.streamed.push_back(weight_meta(m, MatrixKind::Waout, l));
        lay.streamed.push_back(weight_meta(m, MatrixKind::Wffn1, l));
        lay.streamed.push_back(weight_meta(m, MatrixKind::Wffn2, l));
    }
    lay.streamed.push_back(weight_meta(m, MatrixKind::LmHead, -1));
    return lay;
}

// ---------------------------------------------------------------------------
// TensorStore: weights, KV cache, residual stream and per-step scratch.
// Weights are immutable after init; the cache and residual mutate only at
// barrier boundaries during interpretation.
// ---------------------------------------------------------------------------
struct TensorStore {
    ModelConfig model;
    std::vector<LayerWeights> layers;
    std::vector<Matrix> linear_layers;  // stacked_linear kind
    std::vector<float> final_norm;
    Matrix embedding;  // vocab x d_model (lookup table, not chunk-streamed)
    Matrix lm_head;    // vocab x d_model
    KVCache kv;
    std::vector<std::vector<float>> residual;  // batch x d_model

    const Matrix& matrix(const MatrixId& id) const {
        switch (id.kind) {
            case MatrixKind::Wqkv: return layers[id.layer].wqkv;
            case MatrixKind::Waout: return layers[id.layer].waout;
            case MatrixKind::Wffn1: return layers[id.layer].wffn1;
            case MatrixKind::Wffn2: return layers[id.layer].wffn2t;
            case MatrixKind::LmHead: return lm_head;
            case MatrixKind::Linear: return linear_layers[id.layer];
            default: throw ValidationError("matrix(): kv cache is not a weight matrix");
        }
    }

    uint64_t streamed_weight_bytes() const { return store_layout(model).streamed_weight_bytes(); }
    uint64_t total_weight_bytes() const { return store_layout(model).total_weight_bytes(); }
};

namespace detail {

// Deterministic fill: seeded per tensor name so layout changes don't shift
// other tensors' contents.
inline void fill_matrix(Matrix& m, uint64_t seed, double fan_in_scale, bool quantize) {
    std::mt19937_64 rng(seed ^ fnv1a(m.name));
    std::normal_distribution<double> dist(0.0, fan_in_scale);
    m.values.resize(static_cast<size_t>(m.rows) * m.cols);
    for (auto& v : m.values) v = static_cast<float>(dist(rng));
    if (quantize) {
        // Snap values to the 4-bit affine grid, one group at a time.
        int64_t g = m.quant_group;
        std::vector<float> group(g);
        for (int64_t r = 0; r < m.rows; ++r) {
            float* row = m.row(r);
            for (int64_t c0 = 0; c0 < m.cols; c0 += g) {
                std::copy(row + c0, row + c0 + g, group.begin());
                QuantGroup qg = quantize_group(group);
                std::vector<float> deq = dequantize(qg);
                std::copy(deq.begin(), deq.end(), row + c0);
            }
        }
    } else if (m.dtype == DType::BF16) {
        for (auto& v : m.values) v = bf16_round(v);
    }
}

inline void fill_vector(std::vector<float>& v, int64_t n, uint64_t seed, const std::string& name) {
    std::mt19937_64 rng(seed ^ fnv1a(name));
    std::normal_distribution<double> dist(1.0, 0.02);  // norm gains near 1
    v.resize(n);
    for (auto& x : v) x = static_cast<float>(dist(rng));
}

}  // namespace detail

// Builds a deterministic store. Same (model, seed) always yields identical
// contents. Throws before allocating if the layout exceeds `hbm_capacity`.
inline TensorStore init_weights(const ModelConfig& model, uint64_t seed,
                                int64_t max_seq_len = 8192,
                                std::optional<uint64_t> hbm_capacity = std::nullopt) {
    model.validate();
    StoreLayout lay = store_layout(model);
    if (hbm_capacity) {
        uint64_t need = lay.total_weight_bytes() +
                        lay.kv_bytes_per_position() * static_cast<uint64_t>(max_seq_len);
        if (need > *hbm_capacity)
            throw ValidationError("init_weights: model footprint " + std::to_string(need) +
                                  " bytes exceeds hbm_capacity " + std::to_string(*hbm_capacity));
    }

    TensorStore st;
    st.model = model;
    st.residual.assign(model.batch, std::vector<float>(model.d_model, 0.0f));

    auto mk = [&](MatrixKind kind, int32_t layer, const std::string& name) {
        MatrixMeta meta = weight_meta(model, kind, layer);
        Matrix m;
        m.name = name;
        m.rows = meta.rows;
        m.cols = meta.cols;
        m.dtype = meta.dtype;
        m.quantized = meta.quantized;
        m.quant_group = meta.quant_group;
        // Fan-in of the logical operator: d_inter for the GLU output
        // projection, the stored column count otherwise.
        int64_t fan_in = kind == MatrixKind::Wffn2 ? model.d_inter : m.cols;
        detail::fill_matrix(m, seed, 1.0 / std::sqrt(static_cast<double>(fan_in)), m.quantized);
        return m;
    };

    if (model.kind == ModelKind::StackedLinear) {
        for (int32_t l = 0; l < model.layers; ++l)
            st.linear_layers.push_back(mk(MatrixKind::Linear, l, "linear." + std::to_string(l)));
        return st;
    }

    st.layers.resize(model.layers);
    for (int32_t l = 0; l < model.layers; ++l) {
        std::string p = "layer." + std::to_string(l) + ".";
        LayerWeights& lw = st.layers[l];
        lw.wqkv = mk(MatrixKind::Wqkv, l, p + "wqkv");
        lw.waout = mk(MatrixKind::Waout, l, p + "waout");
        lw.wffn1 = mk(MatrixKind::Wffn1, l, p + "wffn1");
        lw.wffn2t = mk(MatrixKind::Wffn2, l, p + "wffn2t");
        detail::fill_vector(lw.norm_attn, model.d_model, seed, p + "norm_attn");
        detail::fill_vector(lw.norm_ffn, model.d_model, seed, p + "norm_ffn");
    }
    detail::fill_vector(st.final_norm, model.d_model, seed, "final_norm");

    st.embedding.name = "embedding";
    st.embedding.rows = model.vocab_size;
    st.embedding.cols = model.d_model;
    st.embedding.dtype = model.dtype;
    detail::fill_matrix(st.embedding, seed, 1.0 / std::sqrt(static_cast<double>(model.d_model)),
                        false);

    st.lm_head = mk(MatrixKind::LmHead, -1, "lm_head");
    st.kv = KVCache(model, max_seq_len);
    return st;
}

// ---------------------------------------------------------------------------
// Flat binary container for test fixtures: magic + version + config echo +
// per-tensor records (name, dtype, shape, offset) + f32 payload.
// ---------------------------------------------------------------------------
namespace detail {

inline void put_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline uint64_t get_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
    uint64_t n = get_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

inline void put_floats(std::ostream& os, const std::vector<float>& v) {
    put_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
}
inline std::vector<float> get_floats(std::istream& is) {
    uint64_t n = get_u64(is);
    std::vector<float> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
    return v;
}

}  // namespace detail

inline constexpr uint64_t kStoreMagic = 0x46535457u;  // "FSTW"
inline constexpr uint64_t kStoreVersion = 1;

inline void save_store(const TensorStore& st, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("save_store: cannot open " + path);
    detail::put_u64(os, kStoreMagic);
    detail::put_u64(os, kStoreVersion);
    RunConfig echo;
    echo.model = st.model;
    detail::put_str(os, serialize(echo));

    auto put_matrix = [&](const Matrix& m) {
        detail::put_str(os, m.name);
        detail::put_u64(os, static_cast<uint64_t>(m.dtype));
        detail::put_u64(os, static_cast<uint64_t>(m.rows));
        detail::put_u64(os, static_cast<uint64_t>(m.cols));
        detail::put_floats(os, m.values);
    };

    if (st.model.kind == ModelKind::StackedLinear) {
        detail::put_u64(os, st.linear_layers.size());
        for (const auto& m : st.linear_layers) put_matrix(m);
        return;
    }
    detail::put_u64(os, st.layers.size());
    for (const auto& lw : st.layers) {
        put_matrix(lw.wqkv);
        put_matrix(lw.waout);
        put_matrix(lw.wffn1);
        put_matrix(lw.wffn2t);
        detail::put_floats(os, lw.norm_attn);
        detail::put_floats(os, lw.norm_ffn);
    }
    detail::put_floats(os, st.final_norm);
    put_matrix(st.embedding);
    put_matrix(st.lm_head);
}

inline TensorStore load_store(const std::string& path, int64_t max_seq_len = 8192) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("load_store: cannot open " + path);
    if (detail::get_u64(is) != kStoreMagic) throw ParseError("load_store: bad magic");
    if (detail::get_u64(is) != kStoreVersion) throw ParseError("load_store: bad version");
    RunConfig echo = parse_config(detail::get_str(is));

    TensorStore st = init_weights(echo.model, 0, max_seq_len);  // shapes, then overwrite
    auto get_matrix = [&](Matrix& m) {
        m.name = detail::get_str(is);
        m.dtype = static_cast<DType>(detail::get_u64(is));
        m.rows = static_cast<int64_t>(detail::get_u64(is));
        m.cols = static_cast<int64_t>(detail::get_u64(is));
        m.values = detail::get_floats(is);
    };

    if (st.model.kind == ModelKind::StackedLinear) {
        uint64_t n = detail::get_u64(is);
        st.linear_layers.resize(n);
        for (auto& m : st.linear_layers) get_matrix(m);
        return st;
    }
    uint64_t n = detail::get_u64(is);
    st.layers.resize(n);
    for (auto& lw : st.layers) {
        get_matrix(lw.wqkv);
        get_matrix(lw.waout);
        get_matrix(lw.wffn1);
        get_matrix(lw.wffn2t);
        lw.norm_attn = detail::get_floats(is);
        lw.norm_ffn = detail::get_floats(is);
    }
    st.final_norm = detail::get_floats(is);
    get_matrix(st.embedding);
    get_matrix(st.lm_head);
    return st;
}

}  // namespace fusesim

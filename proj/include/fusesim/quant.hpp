// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fusesim/types.hpp"

namespace fusesim {

// One group of weight-only affine 4-bit codes. Dequantized value is
// (code - zero_point) * scale. Codes pack two per byte, little nibble first;
// scale and zero point are stored as 16-bit reals next to the codes, so a
// chunk containing whole groups is self-contained.
struct QuantGroup {
    std::vector<uint8_t> codes;  // one code per element, each in [0, 15]
    float scale = 1.0f;
    float zero_point = 8.0f;
};

inline float dequantize_code(uint8_t code, float scale, float zero_point) {
    return (static_cast<float>(code) - zero_point) * scale;
}

inline std::vector<float> dequantize(const QuantGroup& g) {
    std::vector<float> out(g.codes.size());
    for (size_t i = 0; i < g.codes.size(); ++i) {
        if (g.codes[i] > 15) throw ValidationError("quant: code out of [0,15]");
        out[i] = dequantize_code(g.codes[i], g.scale, g.zero_point);
    }
    return out;
}

inline uint8_t quantize_value(float v, float scale, float zero_point) {
    float c = std::round(v / scale + zero_point);
    return static_cast<uint8_t>(std::clamp(c, 0.0f, 15.0f));
}

// Fit an affine grid over [min, max] of the group and encode.
inline QuantGroup quantize_group(const std::vector<float>& values) {
    QuantGroup g;
    float lo = values.empty() ? 0.0f : *std::min_element(values.begin(), values.end());
    float hi = values.empty() ? 0.0f : *std::max_element(values.begin(), values.end());
    float range = hi - lo;
    g.scale = range > 0 ? range / 15.0f : 1.0f;
    g.zero_point = std::round(-lo / g.scale);
    g.zero_point = std::clamp(g.zero_point, 0.0f, 15.0f);
    g.codes.resize(values.size());
    for (size_t i = 0; i < values.size(); ++i)
        g.codes[i] = quantize_value(values[i], g.scale, g.zero_point);
    return g;
}

// Bytes occupied by one row of `cols` elements under the packing above:
// cols/2 code bytes plus 4 bytes (two 16-bit reals) per group.
inline uint64_t quant_row_bytes(int64_t cols, int64_t group_size) {
    return static_cast<uint64_t>(cols) / 2 + static_cast<uint64_t>(cols / group_size) * 4;
}

}  // namespace fusesim

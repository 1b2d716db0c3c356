#pragma once

#include "promptclinic/matrix.hpp"

#include <cstdint>
#include <vector>

namespace promptclinic {

enum class QuantGranularity { per_row, per_tensor };

/// Symmetric absmax int8 quantization. scale_i = absmax(row_i) / 127 with
/// per-row granularity; all-zero rows get scale 1 and q 0.
struct QuantizedMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<int8_t> q;
    std::vector<double> scale; // one per row (per_row) or a single entry (per_tensor)
    QuantGranularity granularity = QuantGranularity::per_row;

    double row_scale(int i) const {
        return granularity == QuantGranularity::per_row ? scale[i] : scale[0];
    }
};

QuantizedMatrix quantize_int8(const Matrix& w,
                              QuantGranularity g = QuantGranularity::per_row);
Matrix dequantize(const QuantizedMatrix& q);

} // namespace promptclinic

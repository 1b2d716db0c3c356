#include "promptclinic/quant.hpp"

#include <algorithm>
#include <cmath>

namespace promptclinic {

namespace {

int8_t quantize_value(double v, double scale) {
    // round half away from zero, then clamp against float slop
    double q = std::round(v / scale);
    q = std::clamp(q, -127.0, 127.0);
    return static_cast<int8_t>(q);
}

} // namespace

QuantizedMatrix quantize_int8(const Matrix& w, QuantGranularity g) {
    QuantizedMatrix out;
    out.rows = w.rows;
    out.cols = w.cols;
    out.granularity = g;
    out.q.resize(w.size());

    if (g == QuantGranularity::per_tensor) {
        double absmax = 0.0;
        for (double v : w.data) absmax = std::max(absmax, std::fabs(v));
        const double scale = absmax > 0.0 ? absmax / 127.0 : 1.0;
        out.scale.assign(1, scale);
        for (size_t i = 0; i < w.data.size(); ++i)
            out.q[i] = absmax > 0.0 ? quantize_value(w.data[i], scale) : 0;
        return out;
    }

    out.scale.resize(w.rows);
    for (int i = 0; i < w.rows; ++i) {
        const double* row = w.row(i);
        double absmax = 0.0;
        for (int j = 0; j < w.cols; ++j) absmax = std::max(absmax, std::fabs(row[j]));
        const double scale = absmax > 0.0 ? absmax / 127.0 : 1.0;
        out.scale[i] = scale;
        int8_t* qrow = out.q.data() + static_cast<size_t>(i) * w.cols;
        for (int j = 0; j < w.cols; ++j)
            qrow[j] = absmax > 0.0 ? quantize_value(row[j], scale) : 0;
    }
    return out;
}

Matrix dequantize(const QuantizedMatrix& q) {
    Matrix w(q.rows, q.cols);
    for (int i = 0; i < q.rows; ++i) {
        const double s = q.row_scale(i);
        const int8_t* qrow = q.q.data() + static_cast<size_t>(i) * q.cols;
        double* wrow = w.row(i);
        for (int j = 0; j < q.cols; ++j) wrow[j] = qrow[j] * s;
    }
    return w;
}

} // namespace promptclinic

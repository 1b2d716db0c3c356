#pragma once

#include <cstddef>
#include <random>
#include <vector>

namespace promptclinic {

/// Dense row-major matrix of doubles. The whole pipeline runs in float64 so
/// gradient checks against central differences are meaningful.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    double* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(0.0); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    static Matrix zeros(int r, int c) { return Matrix(r, c); }

    static Matrix randn(int r, int c, double stddev, std::mt19937_64& rng) {
        Matrix m(r, c);
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : m.data) v = dist(rng);
        return m;
    }
};

bool all_finite(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

} // namespace promptclinic

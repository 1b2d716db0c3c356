#include "promptclinic/kernels.hpp"

#include "promptclinic/errors.hpp"

#include <cmath>
#include <string>

namespace promptclinic::kernels {

namespace {

thread_local bool g_parallel = true;

void check_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    if (a.cols != b.rows)
        throw ShapeMismatch("matmul_nn: " + std::to_string(a.cols) + " vs " + std::to_string(b.rows));
    if (!accumulate) {
        c = Matrix(a.rows, b.cols);
    } else if (c.rows != a.rows || c.cols != b.cols) {
        throw ShapeMismatch("matmul_nn accumulate: bad output shape");
    }
}

void check_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    if (a.cols != b.cols)
        throw ShapeMismatch("matmul_nt: " + std::to_string(a.cols) + " vs " + std::to_string(b.cols));
    if (!accumulate) {
        c = Matrix(a.rows, b.rows);
    } else if (c.rows != a.rows || c.cols != b.rows) {
        throw ShapeMismatch("matmul_nt accumulate: bad output shape");
    }
}

void check_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    if (a.rows != b.rows)
        throw ShapeMismatch("matmul_tn: " + std::to_string(a.rows) + " vs " + std::to_string(b.rows));
    if (!accumulate) {
        c = Matrix(a.cols, b.cols);
    } else if (c.rows != a.cols || c.cols != b.cols) {
        throw ShapeMismatch("matmul_tn accumulate: bad output shape");
    }
}

inline void softmax_row(double* x, int n) {
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        x[j] = std::exp(x[j] - mx);
        sum += x[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) x[j] *= inv;
}

} // namespace

void set_parallel(bool enabled) { g_parallel = enabled; }
bool parallel_enabled() { return g_parallel; }

namespace serial {

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_nn(a, b, c, accumulate);
    const int n = a.rows, k = a.cols, m = b.cols;
    for (int i = 0; i < n; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b.row(p);
            for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_nt(a, b, c, accumulate);
    const int n = a.rows, k = a.cols, m = b.rows;
    for (int i = 0; i < n; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (int j = 0; j < m; ++j) {
            const double* bj = b.row(j);
            double sum = 0.0;
            for (int p = 0; p < k; ++p) sum += ai[p] * bj[p];
            ci[j] += sum;
        }
    }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_tn(a, b, c, accumulate);
    const int k = a.rows, n = a.cols, m = b.cols;
    for (int i = 0; i < n; ++i) {
        double* ci = c.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = a(p, i);
            const double* bp = b.row(p);
            for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

void softmax_rows(Matrix& m) {
    for (int i = 0; i < m.rows; ++i) softmax_row(m.row(i), m.cols);
}

void softmax_rows_causal(Matrix& m) {
    for (int i = 0; i < m.rows; ++i) {
        double* x = m.row(i);
        softmax_row(x, i + 1);
        for (int j = i + 1; j < m.cols; ++j) x[j] = 0.0;
    }
}

} // namespace serial

namespace omp {

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_nn(a, b, c, accumulate);
    const int n = a.rows, k = a.cols, m = b.cols;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b.row(p);
            for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_nt(a, b, c, accumulate);
    const int n = a.rows, k = a.cols, m = b.rows;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (int j = 0; j < m; ++j) {
            const double* bj = b.row(j);
            double sum = 0.0;
            for (int p = 0; p < k; ++p) sum += ai[p] * bj[p];
            ci[j] += sum;
        }
    }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_tn(a, b, c, accumulate);
    const int k = a.rows, n = a.cols, m = b.cols;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        double* ci = c.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = a(p, i);
            const double* bp = b.row(p);
            for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

void softmax_rows(Matrix& m) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m.rows; ++i) softmax_row(m.row(i), m.cols);
}

void softmax_rows_causal(Matrix& m) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m.rows; ++i) {
        double* x = m.row(i);
        softmax_row(x, i + 1);
        for (int j = i + 1; j < m.cols; ++j) x[j] = 0.0;
    }
}

} // namespace omp

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    if (g_parallel) omp::matmul_nn(a, b, c, accumulate);
    else serial::matmul_nn(a, b, c, accumulate);
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    if (g_parallel) omp::matmul_nt(a, b, c, accumulate);
    else serial::matmul_nt(a, b, c, accumulate);
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    if (g_parallel) omp::matmul_tn(a, b, c, accumulate);
    else serial::matmul_tn(a, b, c, accumulate);
}

void softmax_rows(Matrix& m) {
    if (g_parallel) omp::softmax_rows(m);
    else serial::softmax_rows(m);
}

void softmax_rows_causal(Matrix& m) {
    if (g_parallel) omp::softmax_rows_causal(m);
    else serial::softmax_rows_causal(m);
}

} // namespace promptclinic::kernels

#pragma once

#include "promptclinic/matrix.hpp"

namespace promptclinic::kernels {

// Naive single-threaded reference kernels. Loop order is fixed so the OpenMP
// kernels below reproduce them bit-for-bit: every output element accumulates
// its inner sum in ascending-k order in both implementations.
namespace serial {
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void softmax_rows(Matrix& m);
void softmax_rows_causal(Matrix& m);
} // namespace serial

// OpenMP kernels, parallel over output rows. Each element is still produced
// by one thread with the serial accumulation order, so results are
// bit-identical to the reference for any thread count.
namespace omp {
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void softmax_rows(Matrix& m);
void softmax_rows_causal(Matrix& m);
} // namespace omp

// Thread-local dispatch switch. Fold-level parallelism in the evaluation
// harness disables nested kernel parallelism on its worker threads.
void set_parallel(bool enabled);
bool parallel_enabled();

struct ScopedSerial {
    bool prev;
    ScopedSerial() : prev(parallel_enabled()) { set_parallel(false); }
    ~ScopedSerial() { set_parallel(prev); }
};

// Dispatching entry points used by the model.
// c = a * b             (n x k)(k x m) -> (n x m)
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// c = a * b^T           (n x k)(m x k) -> (n x m)
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// c = a^T * b           (k x n)(k x m) -> (n x m)
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// Row-wise softmax in place, numerically stabilized.
void softmax_rows(Matrix& m);
// Row i only attends to columns <= i; columns > i are exact zeros.
void softmax_rows_causal(Matrix& m);

} // namespace promptclinic::kernels

#include "promptclinic/lora.hpp"

#include "promptclinic/errors.hpp"
#include "promptclinic/kernels.hpp"
#include "promptclinic/model.hpp"

#include <algorithm>

namespace promptclinic {

LoraAdapter make_adapter(const std::string& target, int n, int m, int rank, double alpha,
                         std::mt19937_64& rng) {
    if (rank < 1 || rank >= std::min(m, n))
        throw Error("lora rank " + std::to_string(rank) + " must satisfy 1 <= r < min(" +
                    std::to_string(m) + ", " + std::to_string(n) + ")");
    LoraAdapter ad;
    ad.target = target;
    ad.rank = rank;
    ad.alpha = alpha;
    ad.a = Matrix::randn(rank, m, 0.02, rng);
    ad.b = Matrix(n, rank); // zero so the fresh adapter is an exact identity
    return ad;
}

std::vector<double> apply_lora(const Matrix& w, const LoraAdapter& ad,
                               const std::vector<double>& x) {
    const int n = w.rows, m = w.cols;
    if (static_cast<int>(x.size()) != m)
        throw ShapeMismatch("apply_lora: x has " + std::to_string(x.size()) + " entries, want " +
                            std::to_string(m));
    if (ad.a.cols != m || ad.b.rows != n || ad.a.rows != ad.rank || ad.b.cols != ad.rank)
        throw ShapeMismatch("apply_lora: adapter shapes do not conform to the target");

    std::vector<double> ax(ad.rank, 0.0);
    for (int r = 0; r < ad.rank; ++r) {
        const double* ar = ad.a.row(r);
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += ar[j] * x[j];
        ax[r] = s;
    }
    const double scale = ad.scale();
    std::vector<double> y(n, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* wi = w.row(i);
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += wi[j] * x[j];
        const double* bi = ad.b.row(i);
        double lora = 0.0;
        for (int r = 0; r < ad.rank; ++r) lora += bi[r] * ax[r];
        y[i] = s + scale * lora;
    }
    return y;
}

Matrix merge_lora(const Matrix& w, const LoraAdapter& ad) {
    if (ad.a.cols != w.cols || ad.b.rows != w.rows)
        throw ShapeMismatch("merge_lora: adapter shapes do not conform to the target");
    Matrix merged = w;
    const double scale = ad.scale();
    for (int i = 0; i < w.rows; ++i) {
        const double* bi = ad.b.row(i);
        double* mi = merged.row(i);
        for (int r = 0; r < ad.rank; ++r) {
            const double brs = scale * bi[r];
            const double* ar = ad.a.row(r);
            for (int j = 0; j < w.cols; ++j) mi[j] += brs * ar[j];
        }
    }
    return merged;
}

long long trainable_param_count(const ModelConfig& cfg, const std::vector<LoraSpecEntry>& spec) {
    long long total = 0;
    for (const auto& entry : spec) {
        auto [n, m] = weight_shape(cfg, entry.target);
        if (entry.rank < 1 || entry.rank >= std::min(m, n))
            throw Error("lora rank " + std::to_string(entry.rank) + " out of bounds for target '" +
                        entry.target + "'");
        total += static_cast<long long>(entry.rank) * (m + n);
    }
    return total;
}

} // namespace promptclinic

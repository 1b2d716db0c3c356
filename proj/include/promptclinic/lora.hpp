#pragma once

#include "promptclinic/matrix.hpp"

#include <map>
#include <string>
#include <vector>

namespace promptclinic {

/// Low-rank adapter for one weight matrix W (n x m, stored out-by-in).
/// Effective weight is W + (alpha / r) * B * A with A (r x m), B (n x r).
/// B starts at zero so a fresh adapter is an exact identity.
struct LoraAdapter {
    std::string target; // name of the adapted weight matrix
    Matrix a;           // r x m
    Matrix b;           // n x r
    int rank = 0;
    double alpha = 0.0;

    double scale() const { return alpha / rank; }
};

LoraAdapter make_adapter(const std::string& target, int n, int m, int rank, double alpha,
                         std::mt19937_64& rng);

struct AdapterSet {
    std::map<std::string, LoraAdapter> by_target;

    bool empty() const { return by_target.empty(); }
    const LoraAdapter* find(const std::string& target) const {
        auto it = by_target.find(target);
        return it == by_target.end() ? nullptr : &it->second;
    }
};

// y = W x + (alpha/r) * B (A x); W untouched.
std::vector<double> apply_lora(const Matrix& w, const LoraAdapter& ad,
                               const std::vector<double>& x);

// W' = W + (alpha/r) * B * A; merged weights carry zero extra inference cost.
Matrix merge_lora(const Matrix& w, const LoraAdapter& ad);

struct LoraSpecEntry {
    std::string target;
    int rank = 4;
    double alpha = 8.0;
};

// Sum over targets of r * (m + n); base weights count as frozen.
// Throws UnknownTarget when a target names no weight matrix of the model.
long long trainable_param_count(const struct ModelConfig& cfg,
                                const std::vector<LoraSpecEntry>& spec);

} // namespace promptclinic

#pragma once

#include "promptclinic/lora.hpp"
#include "promptclinic/matrix.hpp"
#include "promptclinic/prompt.hpp"
#include "promptclinic/vocab.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace promptclinic {

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);

struct ModelConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int max_len = 512;
    Mode mode = Mode::causal;
    int vocab_size = 0;
    bool tied_head = true;

    int d_head() const { return d_model / n_heads; }
};

void validate_config(const ModelConfig& cfg);

struct LayerParams {
    Matrix ln1_gain, ln1_bias; // 1 x d
    Matrix wq, wk, wv, wo;     // d x d, stored out-by-in
    Matrix ln2_gain, ln2_bias;
    Matrix w1;                 // d_ff x d
    Matrix w2;                 // d x d_ff
};

struct ModelParams {
    Matrix tok_emb; // V x d
    Matrix pos_emb; // max_len x d
    std::vector<LayerParams> layers;
    Matrix lnf_gain, lnf_bias;
    Matrix head; // V x d when untied; empty rows==0 when tied to tok_emb
};

enum class ParamClass { embedding, weight, ln_gain, ln_bias };

struct TensorRef {
    std::string name;
    Matrix* m;
    ParamClass cls;
};

// Fixed-order registry over every tensor; drives the optimizer, checkpoints
// and finite-difference sweeps.
std::vector<TensorRef> named_tensors(ModelParams& p);
std::vector<TensorRef> named_tensors(const ModelParams& p); // refs are non-owning

long long param_count(const ModelConfig& cfg);

// (n, m) = (out, in) shape of a LoRA-targetable weight matrix, e.g.
// "layers.0.attn.q" or "layers.1.ffn.w1". Throws UnknownTarget.
std::pair<int, int> weight_shape(const ModelConfig& cfg, const std::string& target);

ModelParams init_params(const ModelConfig& cfg, uint64_t seed);
void validate_params(const ModelConfig& cfg, const ModelParams& p); // ShapeMismatch

// ---------------------------------------------------------------------------
// forward

struct LayerCache {
    Matrix x_in;
    Matrix ln1_xhat, ln1_out;
    std::vector<double> ln1_rstd;
    Matrix q, k, v;           // L x d
    std::vector<Matrix> att;  // per-head L x L attention probabilities
    Matrix att_out;           // L x d, concatenated head outputs (pre-Wo)
    Matrix x_mid;
    Matrix ln2_xhat, ln2_out;
    std::vector<double> ln2_rstd;
    Matrix ffn_pre, ffn_act;  // L x d_ff
    std::map<std::string, Matrix> lora_u; // target -> scaled low-rank activations
};

struct ForwardCache {
    std::vector<int> ids;
    int n_prompt = 0; // soft prompt rows at the top of the embedded input
    Matrix x0;        // embeddings + positions
    std::vector<LayerCache> layers;
    Matrix lnf_xhat, lnf_out;
    std::vector<double> lnf_rstd;
    Matrix logits; // L' x V
};

// Token-embedding rows for ids (no positions yet) — the input that
// prepend_soft_prompt operates on.
Matrix embed(const ModelParams& p, const std::vector<int>& ids);

// Plain forward pass: logits (positions x vocab). Causal mode masks the
// attention so position t depends only on ids <= t.
Matrix forward(const ModelConfig& cfg, const ModelParams& p, const AdapterSet* adapters,
               const TokenSequence& seq);

// Full training-path forward; `sp` may be null. Returns cache.logits.
const Matrix& forward_cached(const ModelConfig& cfg, const ModelParams& p,
                             const AdapterSet* adapters, const SoftPrompt* sp,
                             const TokenSequence& seq, ForwardCache& cache);

// ---------------------------------------------------------------------------
// loss and gradients

enum class Objective { mask_label_ce, next_token_ce };

struct TrainExample {
    TokenSequence seq;
    // next_token_ce: first predicted position, in sequence coordinates; the
    // label phrase / prompt before it is conditioning only
    int loss_from = -1;
    // mask_label_ce: mask slot and the two label-word ids (AD slot first)
    int mask_pos = -1;
    std::array<int, 2> label_words{-1, -1};
    int true_label = -1; // index into label_words
};

// Which tensor families receive gradients; the rest get exact zeros.
struct TrainMask {
    bool base = true;
    bool lora = false;
    bool soft_prompt = false;
};

struct LoraGrad {
    Matrix a, b;
};

struct GradSet {
    ModelParams model;
    std::map<std::string, LoraGrad> lora;
    Matrix soft_prompt;
};

GradSet make_grads_like(const ModelConfig& cfg, const ModelParams& p, const AdapterSet* adapters,
                        const SoftPrompt* sp);
void zero_grads(GradSet& g);

// Mean loss over the batch; gradients accumulate into `out` (call zero_grads
// first). Throws NonFiniteLoss on divergence.
double loss_and_grads(const ModelConfig& cfg, const ModelParams& p, const AdapterSet* adapters,
                      const SoftPrompt* sp, const std::vector<TrainExample>& batch, Objective obj,
                      const TrainMask& mask, GradSet& out);

// Loss without gradients (finite-difference oracle path).
double batch_loss(const ModelConfig& cfg, const ModelParams& p, const AdapterSet* adapters,
                  const SoftPrompt* sp, const std::vector<TrainExample>& batch, Objective obj);

} // namespace promptclinic

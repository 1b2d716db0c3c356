#include "promptclinic/model.hpp"

#include "promptclinic/errors.hpp"
#include "promptclinic/kernels.hpp"

#include <cmath>

namespace promptclinic {

std::string mode_name(Mode m) { return m == Mode::causal ? "causal" : "masked"; }

Mode mode_from_name(const std::string& s) {
    if (s == "causal") return Mode::causal;
    if (s == "masked") return Mode::masked;
    throw ConfigError("unknown model mode '" + s + "'");
}

void validate_config(const ModelConfig& cfg) {
    if (cfg.d_model <= 0 || cfg.n_layers <= 0 || cfg.n_heads <= 0 || cfg.d_ff <= 0 ||
        cfg.max_len <= 0 || cfg.vocab_size <= kNumReserved)
        throw ConfigError("model config fields must be positive (vocab_size > reserved)");
    if (cfg.d_model % cfg.n_heads != 0)
        throw ConfigError("d_model (" + std::to_string(cfg.d_model) +
                          ") must be divisible by n_heads (" + std::to_string(cfg.n_heads) + ")");
}

std::vector<TensorRef> named_tensors(ModelParams& p) {
    std::vector<TensorRef> out;
    out.push_back({"tok_emb", &p.tok_emb, ParamClass::embedding});
    out.push_back({"pos_emb", &p.pos_emb, ParamClass::embedding});
    for (size_t l = 0; l < p.layers.size(); ++l) {
        const std::string pre = "layers." + std::to_string(l) + ".";
        LayerParams& lp = p.layers[l];
        out.push_back({pre + "ln1.gain", &lp.ln1_gain, ParamClass::ln_gain});
        out.push_back({pre + "ln1.bias", &lp.ln1_bias, ParamClass::ln_bias});
        out.push_back({pre + "attn.q", &lp.wq, ParamClass::weight});
        out.push_back({pre + "attn.k", &lp.wk, ParamClass::weight});
        out.push_back({pre + "attn.v", &lp.wv, ParamClass::weight});
        out.push_back({pre + "attn.o", &lp.wo, ParamClass::weight});
        out.push_back({pre + "ln2.gain", &lp.ln2_gain, ParamClass::ln_gain});
        out.push_back({pre + "ln2.bias", &lp.ln2_bias, ParamClass::ln_bias});
        out.push_back({pre + "ffn.w1", &lp.w1, ParamClass::weight});
        out.push_back({pre + "ffn.w2", &lp.w2, ParamClass::weight});
    }
    out.push_back({"lnf.gain", &p.lnf_gain, ParamClass::ln_gain});
    out.push_back({"lnf.bias", &p.lnf_bias, ParamClass::ln_bias});
    if (p.head.rows > 0) out.push_back({"head", &p.head, ParamClass::weight});
    return out;
}

std::vector<TensorRef> named_tensors(const ModelParams& p) {
    return named_tensors(const_cast<ModelParams&>(p));
}

long long param_count(const ModelConfig& cfg) {
    const long long d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab_size;
    long long n = v * d + static_cast<long long>(cfg.max_len) * d;
    n += cfg.n_layers * (4 * d * d + 2 * ff * d + 4 * d);
    n += 2 * d;
    if (!cfg.tied_head) n += v * d;
    return n;
}

std::pair<int, int> weight_shape(const ModelConfig& cfg, const std::string& target) {
    if (target == "head") {
        if (cfg.tied_head) throw UnknownTarget("head is tied to tok_emb in this config");
        return {cfg.vocab_size, cfg.d_model};
    }
    if (target.rfind("layers.", 0) == 0) {
        size_t dot = target.find('.', 7);
        if (dot != std::string::npos) {
            int layer = -1;
            try {
                layer = std::stoi(target.substr(7, dot - 7));
            } catch (...) {
                throw UnknownTarget("bad layer index in target '" + target + "'");
            }
            if (layer < 0 || layer >= cfg.n_layers)
                throw UnknownTarget("layer out of range in target '" + target + "'");
            const std::string rest = target.substr(dot + 1);
            if (rest == "attn.q" || rest == "attn.k" || rest == "attn.v" || rest == "attn.o")
                return {cfg.d_model, cfg.d_model};
            if (rest == "ffn.w1") return {cfg.d_ff, cfg.d_model};
            if (rest == "ffn.w2") return {cfg.d_model, cfg.d_ff};
        }
    }
    throw UnknownTarget("unknown weight matrix '" + target + "'");
}

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
    validate_config(cfg);
    std::mt19937_64 rng(seed);
    const double std = 0.02;
    ModelParams p;
    p.tok_emb = Matrix::randn(cfg.vocab_size, cfg.d_model, std, rng);
    p.pos_emb = Matrix::randn(cfg.max_len, cfg.d_model, std, rng);
    p.layers.resize(cfg.n_layers);
    for (auto& lp : p.layers) {
        lp.ln1_gain = Matrix(1, cfg.d_model);
        lp.ln1_gain.fill(1.0);
        lp.ln1_bias = Matrix(1, cfg.d_model);
        lp.wq = Matrix::randn(cfg.d_model, cfg.d_model, std, rng);
        lp.wk = Matrix::randn(cfg.d_model, cfg.d_model, std, rng);
        lp.wv = Matrix::randn(cfg.d_model, cfg.d_model, std, rng);
        lp.wo = Matrix::randn(cfg.d_model, cfg.d_model, std, rng);
        lp.ln2_gain = Matrix(1, cfg.d_model);
        lp.ln2_gain.fill(1.0);
        lp.ln2_bias = Matrix(1, cfg.d_model);
        lp.w1 = Matrix::randn(cfg.d_ff, cfg.d_model, std, rng);
        lp.w2 = Matrix::randn(cfg.d_model, cfg.d_ff, std, rng);
    }
    p.lnf_gain = Matrix(1, cfg.d_model);
    p.lnf_gain.fill(1.0);
    p.lnf_bias = Matrix(1, cfg.d_model);
    if (!cfg.tied_head) p.head = Matrix::randn(cfg.vocab_size, cfg.d_model, std, rng);
    return p;
}

void validate_params(const ModelConfig& cfg, const ModelParams& p) {
    auto expect = [](const Matrix& m, int r, int c, const std::string& name) {
        if (m.rows != r || m.cols != c)
            throw ShapeMismatch(name + ": got " + std::to_string(m.rows) + "x" +
                                std::to_string(m.cols) + ", want " + std::to_string(r) + "x" +
                                std::to_string(c));
    };
    expect(p.tok_emb, cfg.vocab_size, cfg.d_model, "tok_emb");
    expect(p.pos_emb, cfg.max_len, cfg.d_model, "pos_emb");
    if (static_cast<int>(p.layers.size()) != cfg.n_layers)
        throw ShapeMismatch("layer count mismatch");
    for (const auto& lp : p.layers) {
        expect(lp.ln1_gain, 1, cfg.d_model, "ln1.gain");
        expect(lp.ln1_bias, 1, cfg.d_model, "ln1.bias");
        expect(lp.wq, cfg.d_model, cfg.d_model, "attn.q");
        expect(lp.wk, cfg.d_model, cfg.d_model, "attn.k");
        expect(lp.wv, cfg.d_model, cfg.d_model, "attn.v");
        expect(lp.wo, cfg.d_model, cfg.d_model, "attn.o");
        expect(lp.ln2_gain, 1, cfg.d_model, "ln2.gain");
        expect(lp.ln2_bias, 1, cfg.d_model, "ln2.bias");
        expect(lp.w1, cfg.d_ff, cfg.d_model, "ffn.w1");
        expect(lp.w2, cfg.d_model, cfg.d_ff, "ffn.w2");
    }
    expect(p.lnf_gain, 1, cfg.d_model, "lnf.gain");
    expect(p.lnf_bias, 1, cfg.d_model, "lnf.bias");
    if (!cfg.tied_head) expect(p.head, cfg.vocab_size, cfg.d_model, "head");
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kLnEps = 1e-5;
const double kInvSqrt2Pi = 0.3989422804014327;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    return phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& xhat,
                        Matrix& out, std::vector<double>& rstd) {
    const int n = x.rows, d = x.cols;
    xhat = Matrix(n, d);
    out = Matrix(n, d);
    rstd.resize(n);
    for (int i = 0; i < n; ++i) {
        const double* xi = x.row(i);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xi[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = xi[j] - mean;
            var += c * c;
        }
        var /= d;
        const double r = 1.0 / std::sqrt(var + kLnEps);
        rstd[i] = r;
        double* xh = xhat.row(i);
        double* oi = out.row(i);
        for (int j = 0; j < d; ++j) {
            xh[j] = (xi[j] - mean) * r;
            oi[j] = gain(0, j) * xh[j] + bias(0, j);
        }
    }
}

// dX is assigned (not accumulated); parameter grads accumulate when wanted.
void layer_norm_backward(const Matrix& d_out, const Matrix& xhat, const std::vector<double>& rstd,
                         const Matrix& gain, Matrix& d_x, Matrix* d_gain, Matrix* d_bias) {
    const int n = d_out.rows, d = d_out.cols;
    d_x = Matrix(n, d);
    for (int i = 0; i < n; ++i) {
        const double* go = d_out.row(i);
        const double* xh = xhat.row(i);
        double* dx = d_x.row(i);
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dxh = go[j] * gain(0, j);
            dx[j] = dxh; // stash dxhat
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
        }
        const double m1 = sum_dxh / d;
        const double m2 = sum_dxh_xh / d;
        for (int j = 0; j < d; ++j) dx[j] = rstd[i] * (dx[j] - m1 - xh[j] * m2);
        if (d_gain)
            for (int j = 0; j < d; ++j) (*d_gain)(0, j) += go[j] * xh[j];
        if (d_bias)
            for (int j = 0; j < d; ++j) (*d_bias)(0, j) += go[j];
    }
}

// y = x * w^T (+ scaled low-rank path when an adapter is attached);
// u_cache receives the scaled low-rank activations for the backward pass.
void linear_forward(const Matrix& x, const Matrix& w, const LoraAdapter* ad, Matrix& y,
                    Matrix* u_cache) {
    kernels::matmul_nt(x, w, y);
    if (ad) {
        Matrix u;
        kernels::matmul_nt(x, ad->a, u); // L x r
        const double s = ad->scale();
        for (auto& v : u.data) v *= s;
        kernels::matmul_nt(u, ad->b, y, /*accumulate=*/true);
        if (u_cache) *u_cache = std::move(u);
    }
}

// Backward of linear_forward. d_x accumulates; weight/adapter grads
// accumulate only when their family is trainable.
void linear_backward(const Matrix& d_y, const Matrix& x, const Matrix& w, const LoraAdapter* ad,
                     const Matrix* u_cache, const TrainMask& mask, Matrix& d_x, Matrix* d_w,
                     LoraGrad* d_ad) {
    kernels::matmul_nn(d_y, w, d_x, /*accumulate=*/true);
    if (mask.base && d_w) kernels::matmul_tn(d_y, x, *d_w, /*accumulate=*/true);
    if (ad) {
        Matrix du;
        kernels::matmul_nn(d_y, ad->b, du); // L x r, grad wrt scaled u
        const double s = ad->scale();
        for (auto& v : du.data) v *= s;
        kernels::matmul_nn(du, ad->a, d_x, /*accumulate=*/true);
        if (mask.lora && d_ad) {
            kernels::matmul_tn(du, x, d_ad->a, /*accumulate=*/true);
            if (u_cache) kernels::matmul_tn(d_y, *u_cache, d_ad->b, /*accumulate=*/true);
        }
    }
}

Matrix copy_head(const Matrix& x, int head, int d_head) {
    Matrix out(x.rows, d_head);
    for (int i = 0; i < x.rows; ++i) {
        const double* src = x.row(i) + head * d_head;
        std::copy(src, src + d_head, out.row(i));
    }
    return out;
}

void add_head_back(Matrix& dst, int head, int d_head, const Matrix& src) {
    for (int i = 0; i < dst.rows; ++i) {
        double* d = dst.row(i) + head * d_head;
        const double* s = src.row(i);
        for (int j = 0; j < d_head; ++j) d[j] += s[j];
    }
}

void check_sequence(const ModelConfig& cfg, const TokenSequence& seq, int n_prompt) {
    if (seq.ids.empty()) throw Error("forward: empty token sequence");
    if (seq.mode != cfg.mode)
        throw ModePolicyMismatch("sequence mode " + mode_name(seq.mode) +
                                 " does not match model mode " + mode_name(cfg.mode));
    if (seq.length() + n_prompt > cfg.max_len)
        throw SequenceTooLong("sequence length " + std::to_string(seq.length() + n_prompt) +
                              " exceeds max_len " + std::to_string(cfg.max_len));
    for (int id : seq.ids)
        if (id < 0 || id >= cfg.vocab_size) throw Error("token id out of vocabulary range");
    for (int pos : seq.mask_positions)
        if (pos < 0 || pos >= seq.length() || seq.ids[pos] != kMask)
            throw Error("mask_positions entry does not hold the MASK id");
}

} // namespace

Matrix embed(const ModelParams& p, const std::vector<int>& ids) {
    Matrix e(static_cast<int>(ids.size()), p.tok_emb.cols);
    for (int i = 0; i < e.rows; ++i) {
        const double* src = p.tok_emb.row(ids[i]);
        std::copy(src, src + e.cols, e.row(i));
    }
    return e;
}

const Matrix& forward_cached(const ModelConfig& cfg, const ModelParams& p,
                             const AdapterSet* adapters, const SoftPrompt* sp,
                             const TokenSequence& seq, ForwardCache& cache) {
    const int n_prompt = sp ? sp->length() : 0;
    check_sequence(cfg, seq, n_prompt);

    cache.ids = seq.ids;
    cache.n_prompt = n_prompt;

    Matrix x = embed(p, seq.ids);
    if (sp) x = prepend_soft_prompt(x, *sp, cfg.max_len);
    const int len = x.rows;
    for (int i = 0; i < len; ++i) {
        double* xi = x.row(i);
        const double* pe = p.pos_emb.row(i);
        for (int j = 0; j < cfg.d_model; ++j) xi[j] += pe[j];
    }
    cache.x0 = x;

    const int dh = cfg.d_head();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    cache.layers.assign(cfg.n_layers, LayerCache{});

    auto adapter_for = [&](const std::string& name) -> const LoraAdapter* {
        return adapters ? adapters->find(name) : nullptr;
    };

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerParams& lp = p.layers[l];
        LayerCache& lc = cache.layers[l];
        const std::string pre = "layers." + std::to_string(l) + ".";
        lc.x_in = x;

        layer_norm_forward(x, lp.ln1_gain, lp.ln1_bias, lc.ln1_xhat, lc.ln1_out, lc.ln1_rstd);

        linear_forward(lc.ln1_out, lp.wq, adapter_for(pre + "attn.q"), lc.q,
                       &lc.lora_u[pre + "attn.q"]);
        linear_forward(lc.ln1_out, lp.wk, adapter_for(pre + "attn.k"), lc.k,
                       &lc.lora_u[pre + "attn.k"]);
        linear_forward(lc.ln1_out, lp.wv, adapter_for(pre + "attn.v"), lc.v,
                       &lc.lora_u[pre + "attn.v"]);

        lc.att.assign(cfg.n_heads, Matrix{});
        lc.att_out = Matrix(len, cfg.d_model);
        for (int h = 0; h < cfg.n_heads; ++h) {
            Matrix qh = copy_head(lc.q, h, dh);
            Matrix kh = copy_head(lc.k, h, dh);
            Matrix vh = copy_head(lc.v, h, dh);
            Matrix& s = lc.att[h];
            kernels::matmul_nt(qh, kh, s);
            for (auto& v : s.data) v *= scale;
            if (cfg.mode == Mode::causal)
                kernels::softmax_rows_causal(s);
            else
                kernels::softmax_rows(s);
            Matrix zh;
            kernels::matmul_nn(s, vh, zh);
            add_head_back(lc.att_out, h, dh, zh);
        }

        Matrix att_proj;
        linear_forward(lc.att_out, lp.wo, adapter_for(pre + "attn.o"), att_proj,
                       &lc.lora_u[pre + "attn.o"]);

        lc.x_mid = Matrix(len, cfg.d_model);
        for (size_t i = 0; i < x.data.size(); ++i) lc.x_mid.data[i] = x.data[i] + att_proj.data[i];

        layer_norm_forward(lc.x_mid, lp.ln2_gain, lp.ln2_bias, lc.ln2_xhat, lc.ln2_out,
                           lc.ln2_rstd);

        linear_forward(lc.ln2_out, lp.w1, adapter_for(pre + "ffn.w1"), lc.ffn_pre,
                       &lc.lora_u[pre + "ffn.w1"]);
        lc.ffn_act = Matrix(len, cfg.d_ff);
        for (size_t i = 0; i < lc.ffn_pre.data.size(); ++i)
            lc.ffn_act.data[i] = gelu(lc.ffn_pre.data[i]);

        Matrix ffn_out;
        linear_forward(lc.ffn_act, lp.w2, adapter_for(pre + "ffn.w2"), ffn_out,
                       &lc.lora_u[pre + "ffn.w2"]);

        Matrix x_next(len, cfg.d_model);
        for (size_t i = 0; i < x_next.data.size(); ++i)
            x_next.data[i] = lc.x_mid.data[i] + ffn_out.data[i];
        x = std::move(x_next);
    }

    layer_norm_forward(x, p.lnf_gain, p.lnf_bias, cache.lnf_xhat, cache.lnf_out, cache.lnf_rstd);

    const Matrix& head = cfg.tied_head ? p.tok_emb : p.head;
    kernels::matmul_nt(cache.lnf_out, head, cache.logits);
    return cache.logits;
}

Matrix forward(const ModelConfig& cfg, const ModelParams& p, const AdapterSet* adapters,
               const TokenSequence& seq) {
    validate_params(cfg, p);
    ForwardCache cache;
    forward_cached(cfg, p, adapters, nullptr, seq, cache);
    return std::move(cache.logits);
}

GradSet make_grads_like(const ModelConfig& cfg, const ModelParams& p, const AdapterSet* adapters,
                        const SoftPrompt* sp) {
    GradSet g;
    g.model.tok_emb = Matrix(p.tok_emb.rows, p.tok_emb.cols);
    g.model.pos_emb = Matrix(p.pos_emb.rows, p.pos_emb.cols);
    g.model.layers.resize(p.layers.size());
    for (size_t l = 0; l < p.layers.size(); ++l) {
        const LayerParams& lp = p.layers[l];
        LayerParams& gl = g.model.layers[l];
        gl.ln1_gain = Matrix(1, cfg.d_model);
        gl.ln1_bias = Matrix(1, cfg.d_model);
        gl.wq = Matrix(lp.wq.rows, lp.wq.cols);
        gl.wk = Matrix(lp.wk.rows, lp.wk.cols);
        gl.wv = Matrix(lp.wv.rows, lp.wv.cols);
        gl.wo = Matrix(lp.wo.rows, lp.wo.cols);
        gl.ln2_gain = Matrix(1, cfg.d_model);
        gl.ln2_bias = Matrix(1, cfg.d_model);
        gl.w1 = Matrix(lp.w1.rows, lp.w1.cols);
        gl.w2 = Matrix(lp.w2.rows, lp.w2.cols);
    }
    g.model.lnf_gain = Matrix(1, cfg.d_model);
    g.model.lnf_bias = Matrix(1, cfg.d_model);
    if (!cfg.tied_head) g.model.head = Matrix(p.head.rows, p.head.cols);
    if (adapters)
        for (const auto& [name, ad] : adapters->by_target)
            g.lora[name] = LoraGrad{Matrix(ad.a.rows, ad.a.cols), Matrix(ad.b.rows, ad.b.cols)};
    if (sp) g.soft_prompt = Matrix(sp->vectors.rows, sp->vectors.cols);
    return g;
}

void zero_grads(GradSet& g) {
    for (auto& t : named_tensors(g.model)) t.m->zero();
    for (auto& [name, lg] : g.lora) {
        lg.a.zero();
        lg.b.zero();
    }
    g.soft_prompt.zero();
}

namespace {

// Fills d_logits for one example and returns its loss. `weight` is the
// 1/batch factor; per-token weighting is mean over the predicted tokens.
double objective_backward(const ModelConfig& cfg, const TrainExample& ex, const Matrix& logits,
                          int n_prompt, Objective obj, double weight, Matrix* d_logits) {
    const int vocab = logits.cols;
    if (obj == Objective::mask_label_ce) {
        if (ex.mask_pos < 0 || ex.mask_pos >= ex.seq.length())
            throw Error("mask_label_ce: bad mask position");
        if (ex.label_words[0] < 0 || ex.label_words[1] < 0 || ex.true_label < 0)
            throw Error("mask_label_ce: missing label words");
        const int row = n_prompt + ex.mask_pos;
        const double l0 = logits(row, ex.label_words[0]);
        const double l1 = logits(row, ex.label_words[1]);
        const double m = std::max(l0, l1);
        const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
        const double z = e0 + e1;
        const double p0 = e0 / z, p1 = e1 / z;
        const double p_true = ex.true_label == 0 ? p0 : p1;
        if (d_logits) {
            (*d_logits)(row, ex.label_words[0]) += weight * (p0 - (ex.true_label == 0 ? 1.0 : 0.0));
            (*d_logits)(row, ex.label_words[1]) += weight * (p1 - (ex.true_label == 1 ? 1.0 : 0.0));
        }
        return -std::log(p_true);
    }

    // next_token_ce
    if (ex.loss_from < 1)
        throw Error("next_token_ce: loss_from must be >= 1 (position 0 has no context)");
    const int count = ex.seq.length() - ex.loss_from;
    if (count <= 0) return 0.0; // empty continuation
    const double token_w = weight / count;
    double loss = 0.0;
    std::vector<double> probs(vocab);
    for (int t = ex.loss_from; t < ex.seq.length(); ++t) {
        const int row = n_prompt + t - 1;
        const int target = ex.seq.ids[t];
        const double* lr = logits.row(row);
        double mx = lr[0];
        for (int jj = 1; jj < vocab; ++jj) mx = std::max(mx, lr[jj]);
        double z = 0.0;
        for (int jj = 0; jj < vocab; ++jj) {
            probs[jj] = std::exp(lr[jj] - mx);
            z += probs[jj];
        }
        const double inv = 1.0 / z;
        loss += -(lr[target] - mx - std::log(z));
        if (d_logits) {
            double* dr = d_logits->row(row);
            for (int jj = 0; jj < vocab; ++jj) dr[jj] += token_w * probs[jj] * inv;
            dr[target] -= token_w;
        }
    }
    return loss / count;
}

void backward_example(const ModelConfig& cfg, const ModelParams& p, const AdapterSet* adapters,
                      const SoftPrompt* sp, const ForwardCache& cache, const Matrix& d_logits,
                      const TrainMask& mask, GradSet& g) {
    const int len = cache.x0.rows;
    const int dh = cfg.d_head();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // head: logits = lnf_out * E^T
    const Matrix& head = cfg.tied_head ? p.tok_emb : p.head;
    Matrix d_lnf_out;
    kernels::matmul_nn(d_logits, head, d_lnf_out);
    if (mask.base) {
        Matrix& d_head = cfg.tied_head ? g.model.tok_emb : g.model.head;
        kernels::matmul_tn(d_logits, cache.lnf_out, d_head, /*accumulate=*/true);
    }

    Matrix dx;
    layer_norm_backward(d_lnf_out, cache.lnf_xhat, cache.lnf_rstd, p.lnf_gain, dx,
                        mask.base ? &g.model.lnf_gain : nullptr,
                        mask.base ? &g.model.lnf_bias : nullptr);

    auto adapter_for = [&](const std::string& name) -> const LoraAdapter* {
        return adapters ? adapters->find(name) : nullptr;
    };
    auto lora_grad_for = [&](const std::string& name) -> LoraGrad* {
        auto it = g.lora.find(name);
        return it == g.lora.end() ? nullptr : &it->second;
    };
    auto cached_u = [&](const LayerCache& lc, const std::string& name) -> const Matrix* {
        auto it = lc.lora_u.find(name);
        return it == lc.lora_u.end() ? nullptr : &it->second;
    };

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerParams& lp = p.layers[l];
        const LayerCache& lc = cache.layers[l];
        LayerParams& gl = g.model.layers[l];
        const std::string pre = "layers." + std::to_string(l) + ".";

        // ffn half: x_out = x_mid + W2(gelu(W1(ln2(x_mid))))
        Matrix d_act(len, cfg.d_ff);
        {
            const std::string w2n = pre + "ffn.w2";
            d_act.zero();
            linear_backward(dx, lc.ffn_act, lp.w2, adapter_for(w2n), cached_u(lc, w2n), mask,
                            d_act, &gl.w2, lora_grad_for(w2n));
        }
        Matrix d_pre(len, cfg.d_ff);
        for (size_t i = 0; i < d_pre.data.size(); ++i)
            d_pre.data[i] = d_act.data[i] * gelu_grad(lc.ffn_pre.data[i]);

        Matrix d_ln2_out(len, cfg.d_model);
        {
            const std::string w1n = pre + "ffn.w1";
            d_ln2_out.zero();
            linear_backward(d_pre, lc.ln2_out, lp.w1, adapter_for(w1n), cached_u(lc, w1n), mask,
                            d_ln2_out, &gl.w1, lora_grad_for(w1n));
        }
        Matrix d_x_mid_ln;
        layer_norm_backward(d_ln2_out, lc.ln2_xhat, lc.ln2_rstd, lp.ln2_gain, d_x_mid_ln,
                            mask.base ? &gl.ln2_gain : nullptr, mask.base ? &gl.ln2_bias : nullptr);
        Matrix d_x_mid = dx; // residual path
        for (size_t i = 0; i < d_x_mid.data.size(); ++i) d_x_mid.data[i] += d_x_mid_ln.data[i];

        // attention half: x_mid = x_in + Wo(att(ln1(x_in)))
        Matrix d_att_out(len, cfg.d_model);
        {
            const std::string won = pre + "attn.o";
            d_att_out.zero();
            linear_backward(d_x_mid, lc.att_out, lp.wo, adapter_for(won), cached_u(lc, won), mask,
                            d_att_out, &gl.wo, lora_grad_for(won));
        }

        Matrix dq(len, cfg.d_model), dk(len, cfg.d_model), dv(len, cfg.d_model);
        for (int h = 0; h < cfg.n_heads; ++h) {
            Matrix qh = copy_head(lc.q, h, dh);
            Matrix kh = copy_head(lc.k, h, dh);
            Matrix vh = copy_head(lc.v, h, dh);
            Matrix dzh = copy_head(d_att_out, h, dh);
            const Matrix& probs = lc.att[h];

            Matrix d_probs;
            kernels::matmul_nt(dzh, vh, d_probs);
            Matrix dvh;
            kernels::matmul_tn(probs, dzh, dvh);

            // softmax backward; causal rows have zero probs past the diagonal
            Matrix d_scores(len, len);
            for (int i = 0; i < len; ++i) {
                const double* pr = probs.row(i);
                const double* dp = d_probs.row(i);
                double dot = 0.0;
                for (int j = 0; j < len; ++j) dot += pr[j] * dp[j];
                double* ds = d_scores.row(i);
                for (int j = 0; j < len; ++j) ds[j] = pr[j] * (dp[j] - dot) * scale;
            }

            Matrix dqh, dkh;
            kernels::matmul_nn(d_scores, kh, dqh);
            kernels::matmul_tn(d_scores, qh, dkh);

            add_head_back(dq, h, dh, dqh);
            add_head_back(dk, h, dh, dkh);
            add_head_back(dv, h, dh, dvh);
        }

        Matrix d_ln1_out(len, cfg.d_model);
        d_ln1_out.zero();
        {
            const std::string qn = pre + "attn.q", kn = pre + "attn.k", vn = pre + "attn.v";
            linear_backward(dq, lc.ln1_out, lp.wq, adapter_for(qn), cached_u(lc, qn), mask,
                            d_ln1_out, &gl.wq, lora_grad_for(qn));
            linear_backward(dk, lc.ln1_out, lp.wk, adapter_for(kn), cached_u(lc, kn), mask,
                            d_ln1_out, &gl.wk, lora_grad_for(kn));
            linear_backward(dv, lc.ln1_out, lp.wv, adapter_for(vn), cached_u(lc, vn), mask,
                            d_ln1_out, &gl.wv, lora_grad_for(vn));
        }
        Matrix d_x_in_ln;
        layer_norm_backward(d_ln1_out, lc.ln1_xhat, lc.ln1_rstd, lp.ln1_gain, d_x_in_ln,
                            mask.base ? &gl.ln1_gain : nullptr, mask.base ? &gl.ln1_bias : nullptr);

        dx = std::move(d_x_mid);
        for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += d_x_in_ln.data[i];
    }

    // dx is now the gradient wrt x0 = [soft prompt; token embeddings] + positions
    const int n_prompt = cache.n_prompt;
    if (mask.base) {
        for (int i = 0; i < len; ++i) {
            double* gp = g.model.pos_emb.row(i);
            const double* d = dx.row(i);
            for (int j = 0; j < cfg.d_model; ++j) gp[j] += d[j];
        }
        for (int i = n_prompt; i < len; ++i) {
            double* ge = g.model.tok_emb.row(cache.ids[i - n_prompt]);
            const double* d = dx.row(i);
            for (int j = 0; j < cfg.d_model; ++j) ge[j] += d[j];
        }
    }
    if (mask.soft_prompt && sp) {
        for (int i = 0; i < n_prompt; ++i) {
            double* gs = g.soft_prompt.row(i);
            const double* d = dx.row(i);
            for (int j = 0; j < cfg.d_model; ++j) gs[j] += d[j];
        }
    }
}

} // namespace

double loss_and_grads(const ModelConfig& cfg, const ModelParams& p, const AdapterSet* adapters,
                      const SoftPrompt* sp, const std::vector<TrainExample>& batch, Objective obj,
                      const TrainMask& mask, GradSet& out) {
    if (batch.empty()) throw EmptyInput("loss_and_grads: empty batch");
    const double weight = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
        ForwardCache cache;
        forward_cached(cfg, p, adapters, sp, ex.seq, cache);
        Matrix d_logits(cache.logits.rows, cache.logits.cols);
        total += objective_backward(cfg, ex, cache.logits, cache.n_prompt, obj, weight, &d_logits);
        backward_example(cfg, p, adapters, sp, cache, d_logits, mask, out);
    }
    const double loss = total * weight;
    if (!std::isfinite(loss)) throw NonFiniteLoss("batch loss is not finite");
    return loss;
}

double batch_loss(const ModelConfig& cfg, const ModelParams& p, const AdapterSet* adapters,
                  const SoftPrompt* sp, const std::vector<TrainExample>& batch, Objective obj) {
    if (batch.empty()) throw EmptyInput("batch_loss: empty batch");
    const double weight = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
        ForwardCache cache;
        forward_cached(cfg, p, adapters, sp, ex.seq, cache);
        total += objective_backward(cfg, ex, cache.logits, cache.n_prompt, obj, weight, nullptr);
    }
    const double loss = total * weight;
    if (!std::isfinite(loss)) throw NonFiniteLoss("batch loss is not finite");
    return loss;
}

} // namespace promptclinic

// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer with tied input embedding / LM head, pre-norm
// blocks, learned absolute positions and a GELU MLP. Everything is expressed
// through the autodiff catalog so input-embedding gradients (and gradients of
// those gradients) are available.

#pragma once

#include "ilm/common.hpp"
#include "ilm/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace ilm {

struct ModelConfig {
    int n_layers = 2;
    int d_model = 128;
    int n_heads = 2;
    int d_ff = 512;
    int vocab_size = 512;
    int max_seq_len = 64;
    double ln_eps = 1e-5;
    std::uint64_t seed = 1234;

    void validate() const {
        if (n_layers < 1 || d_model < 2 || vocab_size < 2 || max_seq_len < 2)
            fail("ModelConfig: degenerate dimension");
        if (n_heads < 1 || d_model % n_heads != 0)
            fail("ModelConfig: d_model must be divisible by n_heads");
        if (ln_eps <= 0) fail("ModelConfig: ln_eps must be > 0");
    }
};

/// Desk default at a given width: heads = d_model/64 (min 2), d_ff = 4*d.
inline ModelConfig default_config(int n_layers, int d_model, int vocab_size, int max_seq_len,
                                  std::uint64_t seed = 1234) {
    ModelConfig c;
    c.n_layers = n_layers;
    c.d_model = d_model;
    c.n_heads = std::max(2, d_model / 64);
    while (d_model % c.n_heads != 0) --c.n_heads;
    c.d_ff = 4 * d_model;
    c.vocab_size = vocab_size;
    c.max_seq_len = max_seq_len;
    c.seed = seed;
    return c;
}

template <typename S = float>
struct ModelParams {
    struct Layer {
        Tensor<S> ln1_g, ln1_b;
        Tensor<S> wq, wk, wv, wo;
        Tensor<S> bq, bk, bv, bo;
        Tensor<S> ln2_g, ln2_b;
        Tensor<S> w1, b1, w2, b2;
    };

    ModelConfig config;
    Tensor<S> wte;  // |V| x d; also the LM head via weight tying
    Tensor<S> wpe;  // max_seq_len x d
    std::vector<Layer> layers;
    Tensor<S> lnf_g, lnf_b;

    /// The LM head is the embedding matrix itself (single storage).
    const Tensor<S>& lm_head() const { return wte; }

    std::vector<std::pair<std::string, Tensor<S>*>> named_tensors() {
        std::vector<std::pair<std::string, Tensor<S>*>> out;
        out.emplace_back("wte", &wte);
        out.emplace_back("wpe", &wpe);
        for (size_t l = 0; l < layers.size(); ++l) {
            auto& L = layers[l];
            std::string p = "layers." + std::to_string(l) + ".";
            out.emplace_back(p + "ln1.g", &L.ln1_g);
            out.emplace_back(p + "ln1.b", &L.ln1_b);
            out.emplace_back(p + "attn.wq", &L.wq);
            out.emplace_back(p + "attn.wk", &L.wk);
            out.emplace_back(p + "attn.wv", &L.wv);
            out.emplace_back(p + "attn.wo", &L.wo);
            out.emplace_back(p + "attn.bq", &L.bq);
            out.emplace_back(p + "attn.bk", &L.bk);
            out.emplace_back(p + "attn.bv", &L.bv);
            out.emplace_back(p + "attn.bo", &L.bo);
            out.emplace_back(p + "ln2.g", &L.ln2_g);
            out.emplace_back(p + "ln2.b", &L.ln2_b);
            out.emplace_back(p + "mlp.w1", &L.w1);
            out.emplace_back(p + "mlp.b1", &L.b1);
            out.emplace_back(p + "mlp.w2", &L.w2);
            out.emplace_back(p + "mlp.b2", &L.b2);
        }
        out.emplace_back("lnf.g", &lnf_g);
        out.emplace_back("lnf.b", &lnf_b);
        return out;
    }

    long long param_count() {
        long long n = 0;
        for (auto& [name, t] : named_tensors()) n += t->size();
        return n;
    }
};

/// Seeded scaled-normal init (std 0.02); gains one, biases zero.
template <typename S = float>
ModelParams<S> init_model(const ModelConfig& cfg) {
    cfg.validate();
    auto rng = make_rng(cfg.seed, 0x30de1);
    std::normal_distribution<double> dist(0.0, 0.02);
    auto normal = [&](Index r, Index c) {
        Mat<S> m(r, c);
        for (Index i = 0; i < r; ++i)
            for (Index j = 0; j < c; ++j) m(i, j) = static_cast<S>(dist(rng));
        return Tensor<S>(std::move(m));
    };
    const int d = cfg.d_model;

    ModelParams<S> p;
    p.config = cfg;
    p.wte = normal(cfg.vocab_size, d);
    p.wpe = normal(cfg.max_seq_len, d);
    p.layers.resize(cfg.n_layers);
    for (auto& L : p.layers) {
        L.ln1_g = Tensor<S>::ones(1, d);
        L.ln1_b = Tensor<S>::zeros(1, d);
        L.wq = normal(d, d);
        L.wk = normal(d, d);
        L.wv = normal(d, d);
        L.wo = normal(d, d);
        L.bq = Tensor<S>::zeros(1, d);
        L.bk = Tensor<S>::zeros(1, d);
        L.bv = Tensor<S>::zeros(1, d);
        L.bo = Tensor<S>::zeros(1, d);
        L.ln2_g = Tensor<S>::ones(1, d);
        L.ln2_b = Tensor<S>::zeros(1, d);
        L.w1 = normal(d, cfg.d_ff);
        L.b1 = Tensor<S>::zeros(1, cfg.d_ff);
        L.w2 = normal(cfg.d_ff, d);
        L.b2 = Tensor<S>::zeros(1, d);
    }
    p.lnf_g = Tensor<S>::ones(1, d);
    p.lnf_b = Tensor<S>::zeros(1, d);
    return p;
}

/// Row-wise layer norm with learnable gain/bias.
template <typename S>
Tensor<S> layer_norm_affine(const Tensor<S>& x, const Tensor<S>& g, const Tensor<S>& b, S eps) {
    Index n = x.rows();
    return add(mul(layer_norm(x, eps), broadcast_rows(g, n)), broadcast_rows(b, n));
}

template <typename S = float>
struct ForwardTrace {
    std::vector<int> tokens;
    Tensor<S> input_embeddings;           // N x d token embeddings (graph-tracked when requested)
    std::vector<Tensor<S>> layer_hidden;  // post-block residual streams
    Tensor<S> final_hidden;               // last block output, before the final norm
    Tensor<S> normed_hidden;              // after the final norm
    Tensor<S> logits;                     // N x |V|
};

namespace detail_model {

template <typename S>
Mat<S> causal_mask(Index n) {
    Mat<S> m = Mat<S>::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) m(i, j) = S(-1e9);
    return m;
}

}  // namespace detail_model

/// Forward from an embeddings matrix (N x d). Used by the token forward and
/// by the one-hot attack path.
template <typename S>
ForwardTrace<S> forward_embeddings(ModelParams<S>& p, const Tensor<S>& e_tok,
                                   bool keep_input_handle = true) {
    const ModelConfig& cfg = p.config;
    const Index n = e_tok.rows();
    if (n > cfg.max_seq_len) fail("forward: sequence exceeds max_seq_len");
    const int dh = cfg.d_model / cfg.n_heads;
    const S eps = static_cast<S>(cfg.ln_eps);
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    ForwardTrace<S> trace;
    if (keep_input_handle) trace.input_embeddings = e_tok;

    Tensor<S> x = add(e_tok, block(p.wpe, 0, 0, n, cfg.d_model));
    Tensor<S> mask(detail_model::causal_mask<S>(n));

    for (auto& L : p.layers) {
        Tensor<S> a = layer_norm_affine(x, L.ln1_g, L.ln1_b, eps);
        Tensor<S> q = add(matmul(a, L.wq), broadcast_rows(L.bq, n));
        Tensor<S> k = add(matmul(a, L.wk), broadcast_rows(L.bk, n));
        Tensor<S> v = add(matmul(a, L.wv), broadcast_rows(L.bv, n));

        Tensor<S> attn_out;
        for (int h = 0; h < cfg.n_heads; ++h) {
            Tensor<S> qh = block(q, 0, h * dh, n, dh);
            Tensor<S> kh = block(k, 0, h * dh, n, dh);
            Tensor<S> vh = block(v, 0, h * dh, n, dh);
            Tensor<S> scores = add(scalar_mul(matmul(qh, transpose(kh)), scale), mask);
            Tensor<S> weights = softmax(scores, 1);
            Tensor<S> oh = matmul(weights, vh);
            Tensor<S> proj = matmul(oh, block(L.wo, h * dh, 0, dh, cfg.d_model));
            attn_out = attn_out.defined() ? add(attn_out, proj) : proj;
        }
        x = add(x, add(attn_out, broadcast_rows(L.bo, n)));

        Tensor<S> m = layer_norm_affine(x, L.ln2_g, L.ln2_b, eps);
        m = gelu(add(matmul(m, L.w1), broadcast_rows(L.b1, n)));
        m = add(matmul(m, L.w2), broadcast_rows(L.b2, n));
        x = add(x, m);
        trace.layer_hidden.push_back(x);
    }

    trace.final_hidden = x;
    trace.normed_hidden = layer_norm_affine(x, p.lnf_g, p.lnf_b, eps);
    trace.logits = matmul(trace.normed_hidden, transpose(p.wte));
    return trace;
}

/// Token forward. With track_input_grads the trace exposes the token
/// embeddings so d(loss)/d(e_i) can be requested from grad().
template <typename S>
ForwardTrace<S> forward(ModelParams<S>& p, const std::vector<int>& tokens,
                        bool track_input_grads = false) {
    if (tokens.empty()) fail("forward: empty token sequence");
    for (int t : tokens)
        if (t < 0 || t >= p.config.vocab_size)
            fail("forward: token id " + std::to_string(t) + " out of range for vocab " +
                 std::to_string(p.config.vocab_size));
    Tensor<S> e_tok = embedding_lookup(p.wte, tokens);
    ForwardTrace<S> trace = forward_embeddings(p, e_tok, track_input_grads);
    trace.tokens = tokens;
    if (!track_input_grads) trace.input_embeddings = Tensor<S>();
    return trace;
}

/// Deterministic argmax decoding; ties resolve to the smaller id. Context is
/// truncated from the left when it would exceed max_seq_len.
template <typename S>
std::vector<int> greedy_generate(ModelParams<S>& p, const std::vector<int>& prefix, int len) {
    if (prefix.empty()) fail("greedy_generate: prefix must be nonempty");
    NoGradGuard ng;
    std::vector<int> ctx = prefix;
    std::vector<int> out;
    for (int step = 0; step < len; ++step) {
        std::vector<int> window = ctx;
        if (static_cast<int>(window.size()) > p.config.max_seq_len)
            window.erase(window.begin(),
                         window.end() - p.config.max_seq_len);
        ForwardTrace<S> t = forward(p, window);
        const auto& row = t.logits.value();
        Index last = row.rows() - 1;
        int best = 0;
        for (Index j = 1; j < row.cols(); ++j)
            if (row(last, j) > row(last, best)) best = static_cast<int>(j);
        out.push_back(best);
        ctx.push_back(best);
    }
    return out;
}

/// exp(mean next-token cross-entropy) over positions 1..N-1. The logits stay
/// in model precision; the log-sum-exp accumulation runs in double so large
/// perplexities keep their low digits.
template <typename S>
double perplexity(ModelParams<S>& p, const std::vector<int>& tokens) {
    if (tokens.size() < 2) fail("perplexity: need at least 2 tokens");
    NoGradGuard ng;
    ForwardTrace<S> t = forward(p, tokens);
    const Mat<S>& logits = t.logits.value();
    double total_logp = 0.0;
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
        Eigen::RowVectorXd z = logits.row(static_cast<Index>(i)).template cast<double>();
        double mx = z.maxCoeff();
        double lse = std::log((z.array() - mx).exp().sum()) + mx;
        total_logp += z(tokens[i + 1]) - lse;
    }
    return std::exp(-total_logp / static_cast<double>(tokens.size() - 1));
}

}  // namespace ilm

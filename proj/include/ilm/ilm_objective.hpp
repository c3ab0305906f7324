// SPDX-License-Identifier: Apache-2.0
//
// The inverse-language-modeling objective: read token identities out of
// input-embedding gradients and train on that signal next to the ordinary
// forward loss. The backward loss differentiates through the gradient, so a
// training step is one forward, one graph-retaining input-gradient pass, one
// readout forward and one full parameter backward.

#pragma once

#include "ilm/common.hpp"
#include "ilm/model.hpp"
#include "ilm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace ilm {

enum class Variant { baseline, identity, bert_like, inv_first };
enum class GradMode { value, direction };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::identity: return "identity";
        case Variant::bert_like: return "bert_like";
        case Variant::inv_first: return "inv_first";
    }
    return "?";
}

inline const char* to_string(GradMode m) { return m == GradMode::value ? "value" : "direction"; }

inline Variant variant_from_string(const std::string& s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "identity") return Variant::identity;
    if (s == "bert_like") return Variant::bert_like;
    if (s == "inv_first") return Variant::inv_first;
    fail("unknown variant: " + s);
}

inline GradMode grad_mode_from_string(const std::string& s) {
    if (s == "value") return GradMode::value;
    if (s == "direction") return GradMode::direction;
    fail("unknown grad mode: " + s);
}

/// Fully determines the training objective.
struct IlmVariantSpec {
    Variant variant = Variant::baseline;
    GradMode grad_mode = GradMode::direction;
    double lambda = 2.0;
    double mask_rate = 0.15;  // bert_like only

    void validate() const {
        if (variant == Variant::bert_like && (mask_rate <= 0.0 || mask_rate >= 1.0))
            fail("IlmVariantSpec: mask_rate must be in (0, 1)");
        if (lambda < 0.0) fail("IlmVariantSpec: lambda must be >= 0");
    }

    std::string name() const {
        if (variant == Variant::baseline) return "baseline";
        return std::string(to_string(variant)) + "-" + (grad_mode == GradMode::value ? "val" : "dir");
    }
};

/// phi: how a gradient is interpreted for classification.
template <typename S>
Tensor<S> phi(const Tensor<S>& e, const Tensor<S>& g, GradMode mode) {
    detail::check_same_shape("phi", e, g);
    return mode == GradMode::value ? g : sub(e, g);
}

/// LayerNorm (sharing the model's final-norm weights) followed by the tied LM
/// head. Feeding the final hidden state reproduces the forward logits.
template <typename S>
Tensor<S> readout_logits(const Tensor<S>& v, ModelParams<S>& p) {
    Tensor<S> normed = layer_norm_affine(v, p.lnf_g, p.lnf_b, static_cast<S>(p.config.ln_eps));
    return matmul(normed, transpose(p.wte));
}

/// Distribution over the vocabulary for each row of v.
template <typename S>
Tensor<S> backward_token_distribution(const Tensor<S>& v, ModelParams<S>& p) {
    return softmax(readout_logits(v, p), 1);
}

struct VariantExample {
    std::vector<int> input;
    std::vector<int> target_positions;
    std::vector<int> target_tokens;
};

/// Target selection per training strategy; inputs keep their length, pads
/// only ever substitute existing positions.
inline VariantExample apply_variant(const std::vector<int>& x, const IlmVariantSpec& spec,
                                    std::mt19937_64& rng, int pad_id) {
    if (x.size() < 2) fail("apply_variant: sequence must have at least 2 tokens");
    VariantExample out;
    out.input = x;
    switch (spec.variant) {
        case Variant::baseline:
            break;
        case Variant::identity:
            for (size_t i = 0; i < x.size(); ++i) {
                out.target_positions.push_back(static_cast<int>(i));
                out.target_tokens.push_back(x[i]);
            }
            break;
        case Variant::bert_like: {
            int n = static_cast<int>(x.size());
            int k = std::max(1, static_cast<int>(std::lround(spec.mask_rate * n)));
            std::vector<int> pos(n);
            for (int i = 0; i < n; ++i) pos[i] = i;
            std::shuffle(pos.begin(), pos.end(), rng);
            pos.resize(k);
            std::sort(pos.begin(), pos.end());
            for (int i : pos) {
                out.target_positions.push_back(i);
                out.target_tokens.push_back(x[i]);
                out.input[i] = pad_id;
            }
            break;
        }
        case Variant::inv_first:
            out.target_positions.push_back(0);
            out.target_tokens.push_back(x[0]);
            out.input[0] = pad_id;
            break;
    }
    return out;
}

template <typename S>
struct CombinedLoss {
    Tensor<S> loss;
    double forward_ce = 0.0;
    double backward_ce = 0.0;
};

/// L = CE(forward) + lambda * CE(gradient readout at the target positions),
/// averaged over the batch. Forward CE always uses the original shifted
/// targets; variant pads only alter inputs.
template <typename S>
CombinedLoss<S> combined_loss(ModelParams<S>& p, const std::vector<std::vector<int>>& batch,
                              const IlmVariantSpec& spec, int pad_id, std::mt19937_64& rng) {
    spec.validate();
    if (batch.empty()) fail("combined_loss: empty batch");

    Tensor<S> total;
    double fwd_sum = 0.0, bwd_sum = 0.0;
    for (const auto& x : batch) {
        VariantExample ve = apply_variant(x, spec, rng, pad_id);
        const bool wants_backward = spec.variant != Variant::baseline;
        ForwardTrace<S> trace = forward(p, ve.input, wants_backward);

        Index n = static_cast<Index>(x.size());
        std::vector<int> targets(x.begin() + 1, x.end());
        Tensor<S> l_fwd =
            cross_entropy(block(trace.logits, 0, 0, n - 1, trace.logits.cols()), targets);
        fwd_sum += static_cast<double>(l_fwd.item());

        Tensor<S> l = l_fwd;
        if (wants_backward && !ve.target_positions.empty()) {
            Tensor<S> g = grad(l_fwd, {trace.input_embeddings}, /*create_graph=*/true)[0];
            Tensor<S> g_rows = gather_rows(g, ve.target_positions);
            Tensor<S> e_rows = gather_rows(trace.input_embeddings, ve.target_positions);
            Tensor<S> v = phi(e_rows, g_rows, spec.grad_mode);
            Tensor<S> l_bwd = cross_entropy(readout_logits(v, p), ve.target_tokens);
            bwd_sum += static_cast<double>(l_bwd.item());
            l = add(l_fwd, scalar_mul(l_bwd, static_cast<S>(spec.lambda)));
        }
        total = total.defined() ? add(total, l) : l;
    }
    CombinedLoss<S> out;
    out.loss = scalar_mul(total, S(1) / static_cast<S>(batch.size()));
    out.forward_ce = fwd_sum / static_cast<double>(batch.size());
    out.backward_ce = bwd_sum / static_cast<double>(batch.size());
    if (!std::isfinite(static_cast<double>(out.loss.item())))
        throw NonFiniteError("combined_loss: non-finite loss");
    return out;
}

/// Single-token recovery rate of the gradient readout: hide token i, keep
/// the visible suffix, read the distribution out of the gradient at the pad
/// position and compare its argmax to x_i. The baseline has no trained
/// readout; it is evaluated on raw gradients.
template <typename S>
double inverse_lm_accuracy(ModelParams<S>& p, const std::vector<std::vector<int>>& sequences,
                           const IlmVariantSpec& spec, int sample_count, int pad_id,
                           std::uint64_t seed) {
    if (sequences.empty()) fail("inverse_lm_accuracy: empty dataset");
    GradMode mode = spec.variant == Variant::baseline ? GradMode::value : spec.grad_mode;

    struct Pick {
        size_t seq;
        int pos;
    };
    auto rng = make_rng(seed, 0xacc);
    std::vector<Pick> picks(sample_count);
    for (auto& pk : picks) {
        pk.seq = rng() % sequences.size();
        int n = static_cast<int>(sequences[pk.seq].size());
        pk.pos = static_cast<int>(rng() % static_cast<std::uint64_t>(n - 1));  // suffix >= 1 target
    }

    std::vector<char> hits(sample_count, 0);
    parallel_for(sample_count, [&](int s) {
        const auto& x = sequences[picks[s].seq];
        int i = picks[s].pos;
        std::vector<int> masked;
        masked.push_back(pad_id);
        masked.insert(masked.end(), x.begin() + i + 1, x.end());
        std::vector<int> targets(x.begin() + i + 1, x.end());

        ForwardTrace<S> trace = forward(p, masked, /*track_input_grads=*/true);
        Index n = static_cast<Index>(masked.size());
        Tensor<S> l =
            cross_entropy(block(trace.logits, 0, 0, n - 1, trace.logits.cols()), targets);
        Tensor<S> g = grad(l, {trace.input_embeddings})[0];

        NoGradGuard ng;
        Tensor<S> g0 = block(g, 0, 0, 1, g.cols());
        Tensor<S> e0 = block(trace.input_embeddings, 0, 0, 1, g.cols());
        Tensor<S> v = phi(e0, g0, mode);
        Mat<S> z = readout_logits(v, p).value();
        int best = 0;
        for (Index j = 1; j < z.cols(); ++j)
            if (z(0, j) > z(0, best)) best = static_cast<int>(j);
        hits[s] = (best == x[i]) ? 1 : 0;
    });

    double total = 0.0;
    for (char h : hits) total += h;
    return total / static_cast<double>(sample_count);
}

}  // namespace ilm

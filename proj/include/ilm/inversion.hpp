// SPDX-License-Identifier: Apache-2.0
//
// Leftward autoregressive reconstruction of a hidden prefix: candidates for
// the previous position come out of the gradient readout, hypotheses are kept
// by lowest model perplexity.

#pragma once

#include "ilm/bigram.hpp"
#include "ilm/ilm_objective.hpp"
#include "ilm/model.hpp"

#include <algorithm>
#include <optional>
#include <vector>

namespace ilm {

enum class InitStrategy { pad, bigram };

/// The training-time initialization carries over to inversion: identity
/// models never saw a pad during training, so they get the bigram
/// predecessor; all other variants get the pad they were trained with.
inline InitStrategy init_strategy_for(const IlmVariantSpec& spec) {
    return spec.variant == Variant::identity ? InitStrategy::bigram : InitStrategy::pad;
}

struct BeamHypothesis {
    std::vector<int> sequence;  // reconstructed-prefix-so-far followed by the visible suffix
    double perplexity = 0.0;
};

struct InversionTask {
    std::vector<int> sample;  // full x of length n
    int split = 0;            // k: x[0:k] hidden, x[k:n] visible
    int beam = 4;
    InitStrategy init = InitStrategy::pad;

    void validate() const {
        if (split <= 0 || split >= static_cast<int>(sample.size()))
            fail("InversionTask: split must satisfy 0 < k < n");
        if (beam < 1) fail("InversionTask: beam must be >= 1");
    }
};

struct ScoredToken {
    int id;
    double prob;
};

/// Top-b candidates for the token before seq[0]: prepend the placeholder,
/// forward with shifted targets, read the gradient at position 0 through the
/// readout. Ties resolve toward the smaller id.
template <typename S>
std::vector<ScoredToken> candidate_prev_tokens(ModelParams<S>& p, const std::vector<int>& seq,
                                               int b, InitStrategy init, GradMode mode, int pad_id,
                                               const BigramModel* bigram) {
    if (seq.empty()) fail("candidate_prev_tokens: empty sequence");
    if (b < 1 || b > p.config.vocab_size) fail("candidate_prev_tokens: bad beam width");

    int placeholder = pad_id;
    if (init == InitStrategy::bigram) {
        if (!bigram) fail("candidate_prev_tokens: bigram init requires a bigram model");
        placeholder = bigram->predict_prev(seq[0]);
    }

    std::vector<int> input;
    input.reserve(seq.size() + 1);
    input.push_back(placeholder);
    input.insert(input.end(), seq.begin(), seq.end());
    if (static_cast<int>(input.size()) > p.config.max_seq_len)
        input.resize(p.config.max_seq_len);

    ForwardTrace<S> trace = forward(p, input, /*track_input_grads=*/true);
    Index n = static_cast<Index>(input.size());
    std::vector<int> targets(input.begin() + 1, input.end());
    Tensor<S> loss =
        cross_entropy(block(trace.logits, 0, 0, n - 1, trace.logits.cols()), targets);
    Tensor<S> g = grad(loss, {trace.input_embeddings})[0];

    NoGradGuard ng;
    Tensor<S> g0 = block(g, 0, 0, 1, g.cols());
    Tensor<S> e0 = block(trace.input_embeddings, 0, 0, 1, g.cols());
    Mat<S> dist = backward_token_distribution(phi(e0, g0, mode), p).value();

    std::vector<int> ids(p.config.vocab_size);
    for (int i = 0; i < p.config.vocab_size; ++i) ids[i] = i;
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int c) { return dist(0, a) > dist(0, c); });

    std::vector<ScoredToken> out;
    out.reserve(b);
    for (int i = 0; i < b; ++i) out.push_back({ids[i], static_cast<double>(dist(0, ids[i]))});
    return out;
}

/// Beam-search inversion; the loop runs until the reconstructed prefix
/// reaches the hidden length k. Returns the prefix of the lowest-perplexity
/// hypothesis; ties resolve lexicographically on the sequence.
template <typename S>
std::vector<int> invert_prefix(ModelParams<S>& p, const InversionTask& task,
                               const IlmVariantSpec& spec, int pad_id, const BigramModel* bigram) {
    task.validate();
    std::vector<int> suffix(task.sample.begin() + task.split, task.sample.end());
    GradMode mode = spec.variant == Variant::baseline ? GradMode::value : spec.grad_mode;

    std::vector<BeamHypothesis> beam = {{suffix, 0.0}};
    for (int produced = 0; produced < task.split; ++produced) {
        std::vector<BeamHypothesis> expanded;
        expanded.reserve(beam.size() * static_cast<size_t>(task.beam));
        for (const auto& hyp : beam) {
            auto cands = candidate_prev_tokens(p, hyp.sequence, task.beam, task.init, mode, pad_id,
                                               bigram);
            for (const auto& c : cands) {
                BeamHypothesis ext;
                ext.sequence.reserve(hyp.sequence.size() + 1);
                ext.sequence.push_back(c.id);
                ext.sequence.insert(ext.sequence.end(), hyp.sequence.begin(), hyp.sequence.end());
                expanded.push_back(std::move(ext));
            }
        }
        parallel_for(static_cast<int>(expanded.size()), [&](int i) {
            std::vector<int> window = expanded[i].sequence;
            if (static_cast<int>(window.size()) > p.config.max_seq_len)
                window.resize(p.config.max_seq_len);
            expanded[i].perplexity = perplexity(p, window);
        });
        std::sort(expanded.begin(), expanded.end(), [](const BeamHypothesis& a,
                                                       const BeamHypothesis& b) {
            if (a.perplexity != b.perplexity) return a.perplexity < b.perplexity;
            return a.sequence < b.sequence;
        });
        if (static_cast<int>(expanded.size()) > task.beam) expanded.resize(task.beam);
        beam = std::move(expanded);
    }

    const BeamHypothesis& best = beam.front();
    return std::vector<int>(best.sequence.begin(), best.sequence.begin() + task.split);
}

struct TokenMetrics {
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    double positional_accuracy = 0.0;
};

/// Set-based token metrics plus order-sensitive positional accuracy
/// (denominator = reference length).
TokenMetrics token_metrics(const std::vector<int>& pred, const std::vector<int>& ref);

struct PerplexityReport {
    std::optional<double> opp, ppp, fpp;
};

/// OPP/PPP/FPP under a held-out reference model; prefixes shorter than two
/// tokens leave the metric unset.
template <typename S>
PerplexityReport perplexity_report(ModelParams<S>& reference, const std::vector<int>& pred_prefix,
                                   const std::vector<int>& suffix,
                                   const std::vector<int>& orig_prefix) {
    PerplexityReport rep;
    auto ppl_of = [&](const std::vector<int>& toks) -> std::optional<double> {
        if (toks.size() < 2) return std::nullopt;
        std::vector<int> window = toks;
        if (static_cast<int>(window.size()) > reference.config.max_seq_len)
            window.resize(reference.config.max_seq_len);
        return perplexity(reference, window);
    };
    rep.opp = ppl_of(orig_prefix);
    rep.ppp = ppl_of(pred_prefix);
    std::vector<int> full = pred_prefix;
    full.insert(full.end(), suffix.begin(), suffix.end());
    rep.fpp = ppl_of(full);
    return rep;
}

/// Cosine of mean token embeddings under the reference model. A stand-in for
/// an external sentence encoder; not comparable to scores from one.
template <typename S>
double semantic_similarity_proxy(ModelParams<S>& reference, const std::vector<int>& a,
                                 const std::vector<int>& b) {
    if (a.empty() || b.empty()) return 0.0;
    NoGradGuard ng;
    Mat<S> ea = embedding_lookup(reference.wte, a).value().colwise().mean();
    Mat<S> eb = embedding_lookup(reference.wte, b).value().colwise().mean();
    double na = ea.norm(), nb = eb.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return static_cast<double>((ea.array() * eb.array()).sum()) / (na * nb);
}

}  // namespace ilm

// SPDX-License-Identifier: Apache-2.0
//
// Greedy Coordinate Gradient prefix attack: one-hot prefix, gradient-ranked
// single-token substitutions, batch argmin walker with a best-so-far record
// and a loss-patience stop.

#pragma once

#include "ilm/ilm_objective.hpp"
#include "ilm/model.hpp"

#include <vector>

namespace ilm {

struct GcgConfig {
    int prefix_len = 10;  // n
    int max_iters = 250;  // T
    int patience = 10;    // consecutive non-improvements allowed
    int top_k = 64;       // substitutions ranked per position
    int batch = 128;      // candidate prefixes per iteration
    std::uint64_t seed = 1;

    void validate(int vocab) const {
        if (prefix_len < 1 || max_iters < 1 || patience < 1 || batch < 1)
            fail("GcgConfig: degenerate attack configuration");
        if (top_k < 1 || top_k > vocab) fail("GcgConfig: top_k must be in [1, |V|]");
    }
};

/// Mean next-token CE of y given the prefix, evaluated without a graph.
double gcg_target_loss(ModelParams<float>& p, const std::vector<int>& prefix,
                       const std::vector<int>& y);

/// One GCG step: gradient of the target CE with respect to the one-hot
/// prefix rows, top_k most-negative coordinates per position, then B
/// single-token substitutions. The first candidate is always the globally
/// best-scoring substitution; the rest are sampled uniformly over
/// (position, candidate) pairs.
std::vector<std::vector<int>> gcg_step(ModelParams<float>& p, const std::vector<int>& prefix,
                                       const std::vector<int>& y, int top_k, int batch,
                                       std::mt19937_64& rng);

struct Improvement {
    int iteration;  // 0 = the random initialization
    std::vector<int> prefix;
    double loss;
};

struct AttackCore {
    std::vector<int> init_prefix;
    std::vector<int> best_prefix;
    double best_loss = 0.0;
    int iterations = 0;
    std::vector<double> accepted_trace;   // best-so-far loss after each iteration
    std::vector<Improvement> improvements;  // strictly decreasing losses, [0] = init
};

/// Single-target attack (random one-hot init, argmin walker, patience stop).
AttackCore gcg_attack(ModelParams<float>& p, const std::vector<int>& y, const GcgConfig& cfg);

struct SuccessEval {
    bool success = false;
    double match_fraction = 0.0;
};

/// Greedy continuations of x and x_star compared position by position over
/// |y| tokens; success means they are identical.
SuccessEval attack_success(ModelParams<float>& p, const std::vector<int>& x,
                           const std::vector<int>& x_star, const std::vector<int>& y);

struct AttackMetrics {
    double ce_orig = 0.0;    // summed CE of y given x
    double ce_attack = 0.0;  // summed CE of y given x_star
    double delta = 0.0;      // ce_orig - ce_attack
    double kl = 0.0;         // KL(f(x) || f(x_star)) summed over y positions
    double ppl_orig_prefix = 0.0;    // reference-model perplexity of x
    double ppl_attack_prefix = 0.0;  // reference-model perplexity of x_star
};

/// CE/KL restricted to the positions that predict y, never the prompt itself.
AttackMetrics attack_metrics(ModelParams<float>& p, ModelParams<float>& reference,
                             const std::vector<int>& x, const std::vector<int>& x_star,
                             const std::vector<int>& y);

struct AttackRecord {
    int sample_id = 0;
    std::vector<int> x, y;
    AttackCore core;
    int success_iteration = -1;  // first iteration whose accepted best matched; -1 = never
    double match_fraction = 0.0;  // of the final best prefix
    AttackMetrics metrics;

    bool success() const { return success_iteration >= 0; }
};

/// Walks the improvement timeline and marks the first iteration whose
/// accepted best prefix reproduces the model's continuation of x.
void evaluate_success_timeline(ModelParams<float>& p, AttackRecord& rec);

struct CurvePoint {
    int iteration;
    double success_rate;
};

/// Success rate as if every attack had stopped at each checkpoint; a sample
/// counts from its first successful accepted best onward, so the curve is
/// non-decreasing and its value at T is the headline success rate.
std::vector<CurvePoint> success_curve(const std::vector<AttackRecord>& records,
                                      const std::vector<int>& checkpoints);

}  // namespace ilm

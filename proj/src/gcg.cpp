// SPDX-License-Identifier: Apache-2.0
#include "ilm/gcg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ilm {

namespace {

std::vector<int> concat(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

/// Summed CE of y and the row softmaxes at the y-predicting positions.
double target_ce_sum(ModelParams<float>& p, const std::vector<int>& prompt,
                     const std::vector<int>& y, Mat<double>* row_probs = nullptr) {
    NoGradGuard ng;
    std::vector<int> full = concat(prompt, y);
    ForwardTrace<float> t = forward(p, full);
    const auto& logits = t.logits.value();
    const long n = static_cast<long>(prompt.size());
    const long m = static_cast<long>(y.size());
    if (row_probs) row_probs->resize(m, logits.cols());
    double total = 0.0;
    for (long j = 0; j < m; ++j) {
        long row = n - 1 + j;
        Eigen::RowVectorXd z = logits.row(row).cast<double>();
        double mx = z.maxCoeff();
        Eigen::RowVectorXd e = (z.array() - mx).exp();
        double denom = e.sum();
        total += -(z(y[j]) - mx - std::log(denom));
        if (row_probs) row_probs->row(j) = e / denom;
    }
    return total;
}

}  // namespace

double gcg_target_loss(ModelParams<float>& p, const std::vector<int>& prefix,
                       const std::vector<int>& y) {
    if (y.empty()) fail("gcg_target_loss: empty target");
    return target_ce_sum(p, prefix, y) / static_cast<double>(y.size());
}

std::vector<std::vector<int>> gcg_step(ModelParams<float>& p, const std::vector<int>& prefix,
                                       const std::vector<int>& y, int top_k, int batch,
                                       std::mt19937_64& rng) {
    const int n = static_cast<int>(prefix.size());
    const int v = p.config.vocab_size;
    if (top_k < 1 || top_k > v) fail("gcg_step: top_k out of range");

    // one-hot prefix rows so the loss gradient lands on token coordinates
    Mat<float> onehot_m = Mat<float>::Zero(n, v);
    for (int i = 0; i < n; ++i) {
        if (prefix[i] < 0 || prefix[i] >= v) fail("gcg_step: prefix token out of range");
        onehot_m(i, prefix[i]) = 1.0f;
    }
    Tensor<float> onehot(onehot_m);
    Tensor<float> e_prefix = matmul(onehot, p.wte);
    Tensor<float> e_y = embedding_lookup(p.wte, y);
    const Index total = n + static_cast<Index>(y.size());
    Tensor<float> e_full = add(pad_block(e_prefix, 0, 0, total, p.config.d_model),
                               pad_block(e_y, n, 0, total, p.config.d_model));

    ForwardTrace<float> t = forward_embeddings(p, e_full);
    std::vector<int> rows;
    for (size_t j = 0; j < y.size(); ++j) rows.push_back(n - 1 + static_cast<int>(j));
    Tensor<float> picked_rows = gather_rows(t.logits, rows);
    Tensor<float> loss = cross_entropy(picked_rows, y);
    Mat<float> g = grad(loss, {onehot})[0].value();

    // per position: the top_k most loss-decreasing token coordinates; the
    // current token is excluded so every candidate is a real substitution
    std::vector<std::vector<int>> cand_tokens(n);
    for (int i = 0; i < n; ++i) {
        std::vector<int> ids;
        ids.reserve(v - 1);
        for (int j = 0; j < v; ++j)
            if (j != prefix[i]) ids.push_back(j);
        std::stable_sort(ids.begin(), ids.end(),
                         [&](int a, int b) { return g(i, a) < g(i, b); });
        ids.resize(std::min<size_t>(ids.size(), static_cast<size_t>(top_k)));
        cand_tokens[i] = std::move(ids);
    }

    // candidate 0 is the single best-scoring swap; the rest are uniform draws
    int best_pos = 0;
    for (int i = 1; i < n; ++i)
        if (g(i, cand_tokens[i][0]) < g(best_pos, cand_tokens[best_pos][0])) best_pos = i;

    std::vector<std::vector<int>> out;
    out.reserve(batch);
    {
        std::vector<int> c = prefix;
        c[best_pos] = cand_tokens[best_pos][0];
        out.push_back(std::move(c));
    }
    while (static_cast<int>(out.size()) < batch) {
        int pos = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
        int k = static_cast<int>(rng() % static_cast<std::uint64_t>(top_k));
        std::vector<int> c = prefix;
        c[pos] = cand_tokens[pos][k];
        out.push_back(std::move(c));
    }
    return out;
}

AttackCore gcg_attack(ModelParams<float>& p, const std::vector<int>& y, const GcgConfig& cfg) {
    if (y.empty()) fail("gcg_attack: target must be nonempty");
    cfg.validate(p.config.vocab_size);

    auto rng = make_rng(cfg.seed, 0x6c6);
    AttackCore core;
    core.init_prefix.resize(cfg.prefix_len);
    for (auto& t : core.init_prefix)
        t = static_cast<int>(rng() % static_cast<std::uint64_t>(p.config.vocab_size));

    std::vector<int> current = core.init_prefix;
    core.best_prefix = current;
    core.best_loss = gcg_target_loss(p, current, y);
    core.improvements.push_back({0, current, core.best_loss});

    double prev_loss = std::numeric_limits<double>::infinity();
    int stall = 0;
    int step = 0;
    while (step < cfg.max_iters && stall < cfg.patience) {
        auto candidates = gcg_step(p, current, y, cfg.top_k, cfg.batch, rng);
        std::vector<double> losses(candidates.size());
        parallel_for(static_cast<int>(candidates.size()),
                     [&](int i) { losses[i] = gcg_target_loss(p, candidates[i], y); });
        size_t arg = 0;
        for (size_t i = 1; i < losses.size(); ++i)
            if (losses[i] < losses[arg]) arg = i;
        current = candidates[arg];
        double loss = losses[arg];

        ++step;
        if (loss < core.best_loss) {
            core.best_loss = loss;
            core.best_prefix = current;
            core.improvements.push_back({step, current, loss});
        }
        core.accepted_trace.push_back(core.best_loss);

        if (loss < prev_loss) {
            prev_loss = loss;
            stall = 0;
        } else {
            ++stall;
        }
    }
    core.iterations = step;
    return core;
}

SuccessEval attack_success(ModelParams<float>& p, const std::vector<int>& x,
                           const std::vector<int>& x_star, const std::vector<int>& y) {
    if (y.empty()) fail("attack_success: target must be nonempty");
    SuccessEval out;
    std::vector<int> rx = greedy_generate(p, x, static_cast<int>(y.size()));
    std::vector<int> rs = greedy_generate(p, x_star, static_cast<int>(y.size()));
    size_t hits = 0;
    for (size_t i = 0; i < y.size(); ++i)
        if (rx[i] == rs[i]) ++hits;
    out.match_fraction = static_cast<double>(hits) / static_cast<double>(y.size());
    out.success = hits == y.size();
    return out;
}

AttackMetrics attack_metrics(ModelParams<float>& p, ModelParams<float>& reference,
                             const std::vector<int>& x, const std::vector<int>& x_star,
                             const std::vector<int>& y) {
    AttackMetrics m;
    Mat<double> probs_x, probs_s;
    m.ce_orig = target_ce_sum(p, x, y, &probs_x);
    m.ce_attack = target_ce_sum(p, x_star, y, &probs_s);
    m.delta = m.ce_orig - m.ce_attack;

    double kl = 0.0;
    for (long j = 0; j < probs_x.rows(); ++j)
        for (long k = 0; k < probs_x.cols(); ++k) {
            double pj = probs_x(j, k);
            if (pj > 0.0) kl += pj * (std::log(pj) - std::log(std::max(probs_s(j, k), 1e-300)));
        }
    m.kl = kl;

    m.ppl_orig_prefix = x.size() >= 2 ? perplexity(reference, x) : 0.0;
    m.ppl_attack_prefix = x_star.size() >= 2 ? perplexity(reference, x_star) : 0.0;
    return m;
}

void evaluate_success_timeline(ModelParams<float>& p, AttackRecord& rec) {
    if (rec.y.empty() || rec.x.empty()) fail("evaluate_success_timeline: record missing x/y");
    std::vector<int> rx = greedy_generate(p, rec.x, static_cast<int>(rec.y.size()));

    rec.success_iteration = -1;
    for (const auto& imp : rec.core.improvements) {
        // greedy with early abort: stop at the first mismatch with rx
        NoGradGuard ng;
        std::vector<int> ctx = imp.prefix;
        bool match = true;
        for (size_t j = 0; j < rec.y.size() && match; ++j) {
            std::vector<int> window = ctx;
            if (static_cast<int>(window.size()) > p.config.max_seq_len)
                window.erase(window.begin(), window.end() - p.config.max_seq_len);
            auto t = forward(p, window);
            const auto& row = t.logits.value();
            long last = row.rows() - 1;
            int best = 0;
            for (long c = 1; c < row.cols(); ++c)
                if (row(last, c) > row(last, best)) best = static_cast<int>(c);
            if (best != rx[j]) match = false;
            ctx.push_back(best);
        }
        if (match) {
            rec.success_iteration = imp.iteration;
            break;
        }
    }
    rec.match_fraction = attack_success(p, rec.x, rec.core.best_prefix, rec.y).match_fraction;
}

std::vector<CurvePoint> success_curve(const std::vector<AttackRecord>& records,
                                      const std::vector<int>& checkpoints) {
    if (records.empty()) fail("success_curve: no records");
    std::vector<CurvePoint> out;
    out.reserve(checkpoints.size());
    for (int c : checkpoints) {
        double hits = 0;
        for (const auto& r : records)
            if (r.success_iteration >= 0 && r.success_iteration <= c) hits += 1;
        out.push_back({c, hits / static_cast<double>(records.size())});
    }
    return out;
}

}  // namespace ilm

// SPDX-License-Identifier: Apache-2.0
#include "ilm/train.hpp"

#include "ilm/checkpoint.hpp"
#include "ilm/csv.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace ilm {

namespace {

std::vector<size_t> epoch_order(size_t n, std::uint64_t seed, long long epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    auto rng = make_rng(seed, 0xe90c + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

double warmup_lr(const TrainOptions& opt, long long step) {
    long long warm = std::max<long long>(
        1, static_cast<long long>(std::llround(opt.warmup_frac * static_cast<double>(opt.steps))));
    double frac = std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warm));
    return opt.adam.lr * frac;
}

}  // namespace

StepStats train_step(ModelParams<float>& params, AdamState& adam,
                     const std::vector<std::vector<int>>& batch, const IlmVariantSpec& spec,
                     int pad_id, const TrainOptions& opt, long long step_index) {
    const int b = static_cast<int>(batch.size());
    auto named = params.named_tensors();
    const size_t n_params = named.size();

    struct ElementResult {
        double loss = 0.0, fwd = 0.0, bwd = 0.0;
        std::vector<Mat<float>> grads;
        bool finite = true;
    };
    std::vector<ElementResult> results(b);

    parallel_for(b, [&](int j) {
        ElementResult& r = results[j];
        // per-element rng keyed by global sample position, so resumed runs
        // draw identical masks
        auto rng = make_rng(opt.seed ^ 0xbe57f00dULL,
                            static_cast<std::uint64_t>(step_index) * batch.size() +
                                static_cast<std::uint64_t>(j));
        CombinedLoss<float> cl;
        try {
            cl = combined_loss(params, {batch[j]}, spec, pad_id, rng);
        } catch (const NonFiniteError&) {
            r.finite = false;
            return;
        }
        r.loss = static_cast<double>(cl.loss.item());
        r.fwd = cl.forward_ce;
        r.bwd = cl.backward_ce;
        if (!std::isfinite(r.loss)) {
            r.finite = false;
            return;
        }
        std::vector<Tensor<float>> wrt;
        wrt.reserve(n_params);
        for (auto& [name, t] : named) wrt.push_back(*t);
        auto gs = grad(cl.loss, wrt);
        r.grads.reserve(n_params);
        for (auto& g : gs) r.grads.push_back(g.value());
    });

    StepStats stats;
    std::vector<Mat<float>> grads;
    grads.reserve(n_params);
    for (size_t k = 0; k < n_params; ++k)
        grads.push_back(Mat<float>::Zero(named[k].second->rows(), named[k].second->cols()));
    const float inv_b = 1.0f / static_cast<float>(b);
    for (int j = 0; j < b; ++j) {
        const ElementResult& r = results[j];
        stats.loss += r.loss / b;
        stats.forward_ce += r.fwd / b;
        stats.backward_ce += r.bwd / b;
        if (!r.finite) stats.finite = false;
    }
    if (!stats.finite || !std::isfinite(stats.loss)) {
        stats.finite = false;
        return stats;
    }
    for (int j = 0; j < b; ++j)
        for (size_t k = 0; k < n_params; ++k) grads[k] += results[j].grads[k] * inv_b;

    clip_global_norm(grads, opt.clip);
    adam_step(params, adam, grads, opt.adam, warmup_lr(opt, step_index));
    return stats;
}

double validation_perplexity(ModelParams<float>& params, const ChunkedDataset& val, int samples,
                             std::uint64_t seed) {
    if (val.sequences.empty()) fail("validation_perplexity: empty validation set");
    size_t n = std::min<size_t>(samples, val.sequences.size());
    auto order = epoch_order(val.sequences.size(), seed, /*epoch=*/-1);
    std::vector<double> ce(n, 0.0);
    parallel_for(static_cast<int>(n), [&](int i) {
        const auto& x = val.sequences[order[i]];
        NoGradGuard ng;
        auto t = forward(params, x);
        std::vector<int> targets(x.begin() + 1, x.end());
        ce[i] = static_cast<double>(
            cross_entropy(block(t.logits, 0, 0, static_cast<Index>(x.size()) - 1, t.logits.cols()),
                          targets)
                .item());
    });
    double total = 0.0;
    for (double c : ce) total += c;
    return std::exp(total / static_cast<double>(n));
}

TrainResult train(ModelParams<float>& params, const ChunkedDataset& data,
                  const IlmVariantSpec& spec, int pad_id, const TrainOptions& opt,
                  AdamState* state, long long start_step) {
    spec.validate();
    if (data.sequences.empty()) fail("train: empty dataset");
    if (opt.steps <= 0) fail("train: steps must be > 0");

    AdamState local_state;
    AdamState& adam = state ? *state : local_state;
    if (!state || adam.m.empty()) adam_init(adam, params);

    std::unique_ptr<CsvWriter> log;
    if (!opt.log_csv.empty())
        log = std::make_unique<CsvWriter>(
            opt.log_csv,
            std::vector<std::string>{"step", "forward_ce", "backward_ce", "val_ppl", "wall_ms"},
            "seed=" + std::to_string(opt.seed) + " variant=" + spec.name());
    if (!opt.ckpt_dir.empty()) std::filesystem::create_directories(opt.ckpt_dir);

    const size_t n = data.sequences.size();
    const int b = opt.batch_size;
    long long cached_epoch = -1;
    std::vector<size_t> order;

    auto t0 = std::chrono::steady_clock::now();
    TrainResult res;
    std::string last_good;

    auto save_ckpt = [&](long long step, const char* tag) {
        if (opt.ckpt_dir.empty()) return std::string();
        std::string path = opt.ckpt_dir + "/" + tag + ".ckpt";
        save_checkpoint(path, params, spec, step, &adam);
        return path;
    };

    for (long long step = start_step; step < opt.steps; ++step) {
        std::vector<std::vector<int>> batch(b);
        for (int j = 0; j < b; ++j) {
            long long pos = step * b + j;
            long long epoch = pos / static_cast<long long>(n);
            if (epoch != cached_epoch) {
                order = epoch_order(n, opt.seed, epoch);
                cached_epoch = epoch;
            }
            batch[j] = data.sequences[order[pos % static_cast<long long>(n)]];
        }

        StepStats st = train_step(params, adam, batch, spec, pad_id, opt, step);
        if (!st.finite) {
            res.halted_non_finite = true;
            res.steps_done = step;
            res.final_checkpoint = last_good;
            return res;
        }
        res.final_forward_ce = st.forward_ce;
        res.final_backward_ce = st.backward_ce;

        bool last = step + 1 == opt.steps;
        if (log && (step % opt.log_every == 0 || last)) {
            double val_ppl = opt.val ? validation_perplexity(params, *opt.val, opt.val_samples,
                                                             opt.seed)
                                     : 0.0;
            if (last) res.final_val_ppl = val_ppl;
            auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
            log->row({CsvWriter::num(step), CsvWriter::num(st.forward_ce),
                      CsvWriter::num(st.backward_ce), CsvWriter::num(val_ppl),
                      CsvWriter::num(static_cast<long long>(ms))});
        }
        if (opt.ckpt_every > 0 && (step + 1) % opt.ckpt_every == 0 && !last)
            last_good = save_ckpt(step + 1, ("step_" + std::to_string(step + 1)).c_str());
    }

    if (opt.val && res.final_val_ppl == 0.0)
        res.final_val_ppl = validation_perplexity(params, *opt.val, opt.val_samples, opt.seed);
    res.steps_done = opt.steps;
    res.final_checkpoint = save_ckpt(opt.steps, "final");
    return res;
}

}  // namespace ilm

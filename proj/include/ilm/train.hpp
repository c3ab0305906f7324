// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ilm/dataset.hpp"
#include "ilm/ilm_objective.hpp"
#include "ilm/model.hpp"
#include "ilm/optimizer.hpp"

#include <string>

namespace ilm {

struct TrainOptions {
    long long steps = 0;
    int batch_size = 16;
    AdamConfig adam;
    double warmup_frac = 0.01;  // linear warmup over this fraction of steps
    double clip = 1.0;
    std::uint64_t seed = 1;
    long long log_every = 50;
    long long ckpt_every = 0;           // 0 = final only
    std::string ckpt_dir;               // empty = no checkpoints
    std::string log_csv;                // empty = no training log
    int val_samples = 64;
    const ChunkedDataset* val = nullptr;
};

struct TrainResult {
    long long steps_done = 0;
    double final_forward_ce = 0.0;
    double final_backward_ce = 0.0;
    double final_val_ppl = 0.0;
    bool halted_non_finite = false;
    std::string final_checkpoint;
};

/// One optimizer step on an explicit batch; exposed for replay tests.
/// Batch elements are evaluated in parallel with private graphs; gradients
/// are reduced in element order so results do not depend on thread count.
struct StepStats {
    double loss = 0.0;
    double forward_ce = 0.0;
    double backward_ce = 0.0;
    bool finite = true;
};
StepStats train_step(ModelParams<float>& params, AdamState& adam,
                     const std::vector<std::vector<int>>& batch, const IlmVariantSpec& spec,
                     int pad_id, const TrainOptions& opt, long long step_index);

/// exp(mean next-token CE) over up to `samples` validation sequences.
double validation_perplexity(ModelParams<float>& params, const ChunkedDataset& val, int samples,
                             std::uint64_t seed);

/// Deterministic epoch-ordered training; a run resumed from (params, adam,
/// start_step) replays the interrupted run bitwise.
TrainResult train(ModelParams<float>& params, const ChunkedDataset& data,
                  const IlmVariantSpec& spec, int pad_id, const TrainOptions& opt,
                  AdamState* state = nullptr, long long start_step = 0);

}  // namespace ilm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ilm/gcg.hpp"
#include "ilm/ilm_objective.hpp"
#include "ilm/model.hpp"

#include <string>
#include <vector>

namespace ilm {

struct Seeds {
    std::uint64_t data = 1;
    std::uint64_t model = 2;
    std::uint64_t train = 3;
    std::uint64_t eval = 4;
    std::uint64_t attack = 5;
    std::uint64_t pag = 6;
    std::uint64_t reference = 7;
};

struct TrainSection {
    int epochs = 1;        // used when steps == 0
    long long steps = 0;   // explicit step count wins over epochs
    int batch_size = 16;
    double lr = 3e-4;
    double warmup_frac = 0.01;
    double clip = 1.0;
    long long log_every = 50;
    long long ckpt_every = 0;
    int val_samples = 64;
};

struct EvalSection {
    int inversion_samples = 32;
    int beam = 4;
    double k_frac = 0.25;  // hidden prefix fraction of the sample length
    int forward_samples = 200;
    int readout_samples = 500;
};

struct GcgSection {
    GcgConfig attack;
    double sample_frac = 0.3;
    int max_samples = 50;
    int x_len = 16;
    int y_len = 8;
    int curve_every = 10;
};

struct PagSection {
    double lambda = 2.0;
    std::vector<double> alpha_grid = {0.05, 0.075, 0.1, 0.15, 0.2, 0.3};
    int per_class = 120;
    int epochs = 12;
    int batch_size = 16;
    double lr = 1e-3;
};

struct ExperimentConfig {
    std::string out_dir = "runs/desk";
    std::string corpus;     // one document per line
    std::string tokenizer;  // JSON tokenizer file
    int vocab_size = 512;
    int seq_len = 64;
    double overlap = 0.25;
    double train_frac = 0.9;
    double val_frac = 0.05;
    double reference_frac = 0.12;  // corpus share held out for the reference model

    ModelConfig model = default_config(2, 128, 512, 64);
    IlmVariantSpec variant;
    TrainSection train;
    EvalSection eval;
    GcgSection gcg;
    PagSection pag;
    Seeds seeds;

    std::string csv_dir() const { return out_dir + "/csv"; }
    std::string ckpt_dir() const { return out_dir + "/checkpoints"; }
    std::string plots_dir() const { return out_dir + "/plots"; }
    std::string samples_dir() const { return out_dir + "/samples"; }
};

/// Reads a JSON config; unknown keys are an error, absent keys keep their
/// defaults. Referenced paths are checked by the command that needs them.
ExperimentConfig load_config(const std::string& path);

/// Writes the fully resolved config snapshot (every field, defaults filled).
void save_config(const ExperimentConfig& cfg, const std::string& path);

/// The seven training strategies of the study: baseline plus each variant in
/// both gradient modes.
std::vector<IlmVariantSpec> matrix_variants(const IlmVariantSpec& base);

}  // namespace ilm

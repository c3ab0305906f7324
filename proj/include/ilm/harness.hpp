// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ilm/bigram.hpp"
#include "ilm/config.hpp"
#include "ilm/dataset.hpp"
#include "ilm/gcg.hpp"
#include "ilm/inversion.hpp"
#include "ilm/pag.hpp"
#include "ilm/tokenizer.hpp"
#include "ilm/train.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace ilm {

struct PreparedData {
    Tokenizer tok;
    SplitDataset main;               // train / val / test
    ChunkedDataset reference_train;  // disjoint shard for the held-out reference model
    BigramModel bigram{1, 0};        // predecessor model over the train split
};

/// Trains the tokenizer from the corpus and writes it to cfg.tokenizer.
void cmd_tokenize_train(const ExperimentConfig& cfg);

/// Loads the tokenizer, encodes the corpus, splits and chunks it (cached
/// under out_dir/cache), and trains the bigram model.
PreparedData prepare_data(const ExperimentConfig& cfg);

long long resolve_steps(const ExperimentConfig& cfg, size_t train_sequences);

struct VariantRun {
    IlmVariantSpec spec;
    std::string checkpoint;
    TrainResult result;
};

/// Trains one variant; checkpoint under checkpoints/<name>/, log under
/// csv/train_<name>.csv. Writes a resolved config snapshot into out_dir.
VariantRun run_training(const ExperimentConfig& cfg, const IlmVariantSpec& spec,
                        PreparedData& data);

/// Baseline model on the disjoint reference shard with its own seed.
std::string train_reference(const ExperimentConfig& cfg, PreparedData& data);

ModelParams<float> load_variant_model(const ExperimentConfig& cfg, const IlmVariantSpec& spec);
ModelParams<float> load_reference_model(const ExperimentConfig& cfg);

struct ForwardEvalRow {
    std::string variant;
    std::string grad_mode;
    double val_ppl = 0, val_ce = 0, test_ppl = 0, test_ce = 0;
    double readout_acc = 0;
    int n = 0;
};

ForwardEvalRow eval_forward(const ExperimentConfig& cfg, ModelParams<float>& params,
                            const IlmVariantSpec& spec, PreparedData& data);
void write_forward_eval_csv(const ExperimentConfig& cfg, const std::vector<ForwardEvalRow>& rows);

struct InversionAggregate {
    std::string variant;
    std::string grad_mode;
    double rec = 0, prec = 0, f1 = 0, acc = 0;
    double opp = 0, ppp = 0, fpp = 0, ss_proxy = 0;
    int n = 0;
};

/// Beam inversion over seeded test samples; raw rows to
/// csv/inversion_<name>.csv, qualitative dump to samples/.
InversionAggregate eval_inversion(const ExperimentConfig& cfg, ModelParams<float>& params,
                                  const IlmVariantSpec& spec, ModelParams<float>& reference,
                                  PreparedData& data);

/// The shared, persisted attack sample selection (same for every variant).
std::vector<int> attack_sample_ids(const ExperimentConfig& cfg, size_t test_size);

struct AttackAggregate {
    std::string variant;
    std::string grad_mode;
    double asr = 0;
    double mean_steps = 0, std_steps = 0;
    double ce_orig = 0, ce_attack = 0, delta = 0, kl = 0;
    double ppl_orig = 0, ppl_attack = 0;
    int n = 0, n_success = 0;
};

/// GCG over the shared samples; raw rows to csv/attack_<name>.csv, success
/// curve to csv/ and plots/, qualitative dump to samples/. CE/KL/perplexity
/// aggregates cover successful attacks only.
AttackAggregate eval_attack(const ExperimentConfig& cfg, ModelParams<float>& params,
                            const IlmVariantSpec& spec, ModelParams<float>& reference,
                            PreparedData& data, std::vector<AttackRecord>* records_out = nullptr);

struct PagStudyResult {
    std::vector<RobustnessRow> rows;
    double calibrated_alpha = 0;  // smallest alpha dropping the baseline >= 20 points
};

/// Trains baseline / identity / pag classifier heads on frozen encoder
/// features and sweeps FGSM; rows to csv/pag_robustness.csv.
PagStudyResult run_pag_study(const ExperimentConfig& cfg, ModelParams<float>& encoder);

/// Aggregates the run directory's raw CSVs into report tables (printed and
/// written as csv/report_*.csv). Pure aggregation; no model evaluation.
void write_report(const std::string& run_dir, std::ostream& out);

/// Trains and evaluates every variant plus the reference model; keeps going
/// past failed cells and records them in csv/errors.csv.
void run_matrix(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace ilm

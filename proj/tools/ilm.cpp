// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: tokenizer training, variant training, forward /
// inversion / attack / classification evaluations, reporting, and the full
// variant matrix. Every subcommand reads a JSON config plus flag overrides.

#include "CLI11.hpp"

#include "ilm/checkpoint.hpp"
#include "ilm/harness.hpp"
#include "ilm/textgen.hpp"

#include <iostream>

namespace {

struct Overrides {
    std::string variant, grad_mode, out_dir, corpus, tokenizer;
    double lambda = -1.0;
    long long steps = -1;
    int max_iters = -1, patience = -1;
    int vocab_size = -1;
};

ilm::ExperimentConfig resolve(const std::string& config_path, const Overrides& ov) {
    ilm::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = ilm::load_config(config_path);
    if (!ov.variant.empty()) cfg.variant.variant = ilm::variant_from_string(ov.variant);
    if (!ov.grad_mode.empty()) cfg.variant.grad_mode = ilm::grad_mode_from_string(ov.grad_mode);
    if (ov.lambda >= 0) cfg.variant.lambda = ov.lambda;
    if (ov.steps >= 0) cfg.train.steps = ov.steps;
    if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
    if (!ov.corpus.empty()) cfg.corpus = ov.corpus;
    if (!ov.tokenizer.empty()) cfg.tokenizer = ov.tokenizer;
    if (ov.vocab_size > 0) {
        cfg.vocab_size = ov.vocab_size;
        cfg.model.vocab_size = ov.vocab_size;
    }
    if (ov.max_iters > 0) cfg.gcg.attack.max_iters = ov.max_iters;
    if (ov.patience > 0) cfg.gcg.attack.patience = ov.patience;
    return cfg;
}

void add_common(CLI::App* cmd, std::string& config_path, Overrides& ov) {
    cmd->add_option("--config", config_path, "JSON experiment config");
    cmd->add_option("--variant", ov.variant, "baseline|identity|bert_like|inv_first");
    cmd->add_option("--grad-mode", ov.grad_mode, "value|direction");
    cmd->add_option("--lambda", ov.lambda, "backward-loss weight");
    cmd->add_option("--out", ov.out_dir, "run output directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"inverse language modeling lab"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;

    // gen-corpus
    std::string corpus_out;
    std::size_t min_chars = 5'000'000;
    std::uint64_t corpus_seed = 1;
    auto* gen = app.add_subcommand("gen-corpus", "write a synthetic story corpus");
    gen->add_option("--out", corpus_out, "output text file")->required();
    gen->add_option("--min-chars", min_chars, "minimum corpus size in bytes");
    gen->add_option("--seed", corpus_seed, "generator seed");

    auto* tokt = app.add_subcommand("tokenize-train", "train the BPE tokenizer");
    tokt->add_option("--config", config_path, "JSON experiment config");
    tokt->add_option("--corpus", ov.corpus, "corpus file (one document per line)");
    tokt->add_option("--tokenizer", ov.tokenizer, "tokenizer output path");
    tokt->add_option("--vocab-size", ov.vocab_size, "BPE vocabulary size");

    auto* train_cmd = app.add_subcommand("train", "train one variant");
    add_common(train_cmd, config_path, ov);
    train_cmd->add_option("--steps", ov.steps, "optimizer steps (overrides epochs)");
    bool train_reference_model = false;
    train_cmd->add_flag("--reference", train_reference_model,
                        "train the held-out reference model instead of a variant");

    auto* evalf = app.add_subcommand("eval-forward", "forward-mode evaluation");
    add_common(evalf, config_path, ov);

    auto* evali = app.add_subcommand("eval-invert", "beam-search inversion evaluation");
    add_common(evali, config_path, ov);

    auto* attack = app.add_subcommand("attack", "GCG attack evaluation");
    add_common(attack, config_path, ov);
    attack->add_option("--steps", ov.max_iters, "maximum GCG iterations");
    attack->add_option("--patience", ov.patience, "loss non-decrease limit");

    auto* pag = app.add_subcommand("pag", "classification robustness study");
    add_common(pag, config_path, ov);

    std::string report_dir;
    auto* report = app.add_subcommand("report", "aggregate a run directory's CSVs");
    report->add_option("--in", report_dir, "run directory")->required();

    auto* matrix = app.add_subcommand("matrix", "train and evaluate every variant");
    add_common(matrix, config_path, ov);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) {
            ilm::textgen::write_corpus(corpus_out, min_chars, corpus_seed);
            std::cout << "wrote " << corpus_out << "\n";
            return 0;
        }

        ilm::ExperimentConfig cfg = resolve(config_path, ov);

        if (tokt->parsed()) {
            ilm::cmd_tokenize_train(cfg);
            std::cout << "wrote " << cfg.tokenizer << "\n";
        } else if (train_cmd->parsed()) {
            auto data = ilm::prepare_data(cfg);
            if (train_reference_model) {
                std::string ckpt = ilm::train_reference(cfg, data);
                std::cout << "trained reference model\ncheckpoint " << ckpt << "\n";
                return 0;
            }
            auto run = ilm::run_training(cfg, cfg.variant, data);
            std::cout << "trained " << run.spec.name() << ": steps " << run.result.steps_done
                      << ", forward ce " << run.result.final_forward_ce << ", backward ce "
                      << run.result.final_backward_ce << ", val ppl " << run.result.final_val_ppl
                      << "\ncheckpoint " << run.checkpoint << "\n";
        } else if (evalf->parsed()) {
            auto data = ilm::prepare_data(cfg);
            auto params = ilm::load_variant_model(cfg, cfg.variant);
            auto row = ilm::eval_forward(cfg, params, cfg.variant, data);
            ilm::write_forward_eval_csv(cfg, {row});
            std::cout << cfg.variant.name() << ": val ppl " << row.val_ppl << ", test ppl "
                      << row.test_ppl << ", readout acc " << row.readout_acc << "\n";
        } else if (evali->parsed()) {
            auto data = ilm::prepare_data(cfg);
            auto params = ilm::load_variant_model(cfg, cfg.variant);
            auto reference = ilm::load_reference_model(cfg);
            auto agg = ilm::eval_inversion(cfg, params, cfg.variant, reference, data);
            std::cout << cfg.variant.name() << ": rec " << agg.rec << ", prec " << agg.prec
                      << ", f1 " << agg.f1 << ", acc " << agg.acc << ", ppp " << agg.ppp << "\n";
        } else if (attack->parsed()) {
            auto data = ilm::prepare_data(cfg);
            auto params = ilm::load_variant_model(cfg, cfg.variant);
            auto reference = ilm::load_reference_model(cfg);
            auto agg = ilm::eval_attack(cfg, params, cfg.variant, reference, data);
            std::cout << cfg.variant.name() << ": success rate " << agg.asr << " over " << agg.n
                      << " samples, mean steps " << agg.mean_steps << "\n";
        } else if (pag->parsed()) {
            ilm::IlmVariantSpec base;
            base.variant = ilm::Variant::baseline;
            auto encoder = ilm::load_variant_model(cfg, base);
            auto res = ilm::run_pag_study(cfg, encoder);
            std::cout << "robustness rows: " << res.rows.size() << ", calibrated alpha "
                      << res.calibrated_alpha << "\n";
        } else if (report->parsed()) {
            ilm::write_report(report_dir, std::cout);
        } else if (matrix->parsed()) {
            ilm::run_matrix(cfg, std::cout);
        }
        return 0;
    } catch (const ilm::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ilm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

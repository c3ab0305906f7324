// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ilm/harness.hpp"
#include "ilm/plot.hpp"
#include "ilm/textgen.hpp"
#include "ilm/csv.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

ilm::ExperimentConfig tiny_experiment(const std::string& root) {
    ilm::ExperimentConfig cfg;
    cfg.out_dir = root + "/run";
    cfg.corpus = root + "/corpus.txt";
    cfg.tokenizer = root + "/run/tokenizer.json";
    cfg.vocab_size = 300;
    cfg.seq_len = 16;
    cfg.overlap = 0.25;

    cfg.model.n_layers = 1;
    cfg.model.d_model = 16;
    cfg.model.n_heads = 2;
    cfg.model.d_ff = 32;
    cfg.model.vocab_size = 300;
    cfg.model.max_seq_len = 16;

    cfg.train.steps = 30;
    cfg.train.batch_size = 8;
    cfg.train.log_every = 10;
    cfg.train.val_samples = 8;

    cfg.eval.inversion_samples = 4;
    cfg.eval.beam = 2;
    cfg.eval.forward_samples = 16;
    cfg.eval.readout_samples = 40;

    cfg.gcg.attack.prefix_len = 4;
    cfg.gcg.attack.max_iters = 6;
    cfg.gcg.attack.patience = 6;
    cfg.gcg.attack.top_k = 4;
    cfg.gcg.attack.batch = 8;
    cfg.gcg.max_samples = 3;
    cfg.gcg.x_len = 6;
    cfg.gcg.y_len = 3;
    cfg.gcg.curve_every = 2;

    cfg.pag.per_class = 8;
    cfg.pag.epochs = 2;
    cfg.pag.alpha_grid = {0.1, 0.5};
    return cfg;
}

struct Workspace {
    std::string root = "harness_ws";
    Workspace() {
        fs::remove_all(root);
        fs::create_directories(root);
        ilm::textgen::write_corpus(root + "/corpus.txt", 60'000, 11);
    }
    ~Workspace() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("config round trip and validation") {
    Workspace ws;
    auto cfg = tiny_experiment(ws.root);
    fs::create_directories(cfg.out_dir);
    ilm::save_config(cfg, ws.root + "/cfg.json");
    auto back = ilm::load_config(ws.root + "/cfg.json");
    CHECK(back.vocab_size == cfg.vocab_size);
    CHECK(back.model.d_model == cfg.model.d_model);
    CHECK(back.gcg.attack.max_iters == cfg.gcg.attack.max_iters);
    CHECK(back.train.steps == cfg.train.steps);

    std::ofstream bad(ws.root + "/bad.json");
    bad << "{\"no_such_key\": 1}";
    bad.close();
    CHECK_THROWS_AS(ilm::load_config(ws.root + "/bad.json"), ilm::UsageError);
    std::ofstream bad2(ws.root + "/bad2.json");
    bad2 << "{nope";
    bad2.close();
    CHECK_THROWS_AS(ilm::load_config(ws.root + "/bad2.json"), ilm::UsageError);
}

TEST_CASE("matrix variants enumerate the seven training strategies") {
    ilm::IlmVariantSpec base;
    auto all = ilm::matrix_variants(base);
    REQUIRE(all.size() == 7);
    CHECK(all[0].variant == ilm::Variant::baseline);
    std::set<std::string> names;
    for (const auto& s : all) names.insert(s.name());
    CHECK(names.size() == 7);
}

TEST_CASE("plot CSV re-read reproduces the series; single point draws a marker") {
    Workspace ws;
    ilm::PlotSeries s1{"a", {{0, 0.1}, {10, 0.4}, {20, 0.4}}};
    ilm::PlotSeries s2{"b", {{5, 0.2}}};
    ilm::emit_plot({s1, s2}, "test", "x", "y", ws.root + "/p.csv", ws.root + "/p.svg");
    auto back = ilm::read_plot_csv(ws.root + "/p.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "a");
    CHECK(back[0].points == s1.points);
    CHECK(back[1].points == s2.points);
    std::string svg = slurp(ws.root + "/p.svg");
    CHECK(svg.find("<circle") != std::string::npos);
    CHECK(svg.find("<svg") == 0);
}

TEST_CASE("end-to-end tiny pipeline: tokenize, train, eval, attack, pag, report") {
    Workspace ws;
    auto cfg = tiny_experiment(ws.root);

    ilm::cmd_tokenize_train(cfg);
    REQUIRE(fs::exists(cfg.tokenizer));

    auto data = ilm::prepare_data(cfg);
    CHECK(data.main.train.size() > 0);
    CHECK(data.main.val.size() > 0);
    CHECK(data.main.test.size() > 0);
    CHECK(data.reference_train.size() > 0);

    // cache round trip: preparing again loads identical splits
    auto again = ilm::prepare_data(cfg);
    CHECK(again.main.train.sequences == data.main.train.sequences);

    ilm::train_reference(cfg, data);
    auto reference = ilm::load_reference_model(cfg);

    ilm::IlmVariantSpec base;
    base.variant = ilm::Variant::baseline;
    ilm::IlmVariantSpec ident;
    ident.variant = ilm::Variant::identity;
    ident.grad_mode = ilm::GradMode::direction;

    for (const auto& spec : {base, ident}) {
        auto run = ilm::run_training(cfg, spec, data);
        CHECK(fs::exists(run.checkpoint));
        CHECK(fs::exists(cfg.csv_dir() + "/train_" + spec.name() + ".csv"));
    }
    CHECK(fs::exists(cfg.out_dir + "/config.json"));

    auto params_base = ilm::load_variant_model(cfg, base);
    auto params_ident = ilm::load_variant_model(cfg, ident);

    auto fwd_base = ilm::eval_forward(cfg, params_base, base, data);
    auto fwd_ident = ilm::eval_forward(cfg, params_ident, ident, data);
    CHECK(fwd_base.val_ppl > 0);
    CHECK(fwd_ident.val_ppl > 0);
    ilm::write_forward_eval_csv(cfg, {fwd_base, fwd_ident});

    auto inv = ilm::eval_inversion(cfg, params_ident, ident, reference, data);
    CHECK(inv.n == 4);
    CHECK(fs::exists(cfg.csv_dir() + "/inversion_identity-dir.csv"));
    CHECK(fs::exists(cfg.samples_dir() + "/inversion_identity-dir.txt"));

    std::vector<ilm::AttackRecord> records;
    auto atk = ilm::eval_attack(cfg, params_base, base, reference, data, &records);
    CHECK(atk.n == 3);
    CHECK(fs::exists(cfg.csv_dir() + "/attack_baseline.csv"));
    CHECK(fs::exists(cfg.csv_dir() + "/attack_samples.csv"));
    CHECK(fs::exists(cfg.csv_dir() + "/success_curve_baseline.csv"));
    CHECK(fs::exists(cfg.plots_dir() + "/success_curve_baseline.svg"));
    for (const auto& r : records)
        for (size_t i = 1; i < r.core.accepted_trace.size(); ++i)
            CHECK(r.core.accepted_trace[i] <= r.core.accepted_trace[i - 1]);

    // identical config + seeds give byte-identical attack CSVs
    std::string first = slurp(cfg.csv_dir() + "/attack_baseline.csv");
    ilm::eval_attack(cfg, params_base, base, reference, data);
    CHECK(slurp(cfg.csv_dir() + "/attack_baseline.csv") == first);

    // shared sample selection is persisted and identical across variants
    std::string ids_first = slurp(cfg.csv_dir() + "/attack_samples.csv");
    ilm::eval_attack(cfg, params_ident, ident, reference, data);
    CHECK(slurp(cfg.csv_dir() + "/attack_samples.csv") == ids_first);

    auto study = ilm::run_pag_study(cfg, params_base);
    CHECK(study.rows.size() == 3 * cfg.pag.alpha_grid.size());
    CHECK(fs::exists(cfg.csv_dir() + "/pag_robustness.csv"));

    std::ostringstream report;
    ilm::write_report(cfg.out_dir, report);
    CHECK(report.str().find("forward mode") != std::string::npos);
    CHECK(report.str().find("GCG attacks") != std::string::npos);
    CHECK(fs::exists(cfg.csv_dir() + "/report_forward.csv"));
    CHECK(fs::exists(cfg.csv_dir() + "/report_attack_success.csv"));
    CHECK(fs::exists(cfg.csv_dir() + "/report_pag.csv"));

    // every emitted number is re-derivable from the raw CSVs: the report ASR
    // equals a recount over attack_baseline.csv
    auto raw = ilm::read_csv(cfg.csv_dir() + "/attack_baseline.csv");
    double succ = 0;
    for (size_t r = 0; r < raw.rows.size(); ++r)
        if (raw.at(r, "success") == "1") succ += 1;
    auto rep = ilm::read_csv(cfg.csv_dir() + "/report_attack_success.csv");
    bool found = false;
    for (size_t r = 0; r < rep.rows.size(); ++r)
        if (rep.at(r, "variant") == "baseline") {
            found = true;
            CHECK(rep.num_at(r, "success_rate") ==
                  doctest::Approx(succ / static_cast<double>(raw.rows.size())));
        }
    CHECK(found);
}

TEST_CASE("micro matrix: seven variants, shared attack samples, report rows") {
    Workspace ws;
    auto cfg = tiny_experiment(ws.root);
    cfg.train.steps = 12;
    cfg.eval.inversion_samples = 2;
    cfg.eval.forward_samples = 8;
    cfg.eval.readout_samples = 20;
    cfg.gcg.attack.max_iters = 4;
    cfg.gcg.max_samples = 2;
    cfg.pag.per_class = 6;
    cfg.pag.epochs = 1;

    ilm::cmd_tokenize_train(cfg);
    std::ostringstream log;
    ilm::run_matrix(cfg, log);

    auto fwd = ilm::read_csv(cfg.csv_dir() + "/forward_eval.csv");
    CHECK(fwd.rows.size() == 7);

    // the attack sample list is shared across variants: one id file, and each
    // per-variant attack CSV covers exactly those ids
    auto ids = ilm::read_csv(cfg.csv_dir() + "/attack_samples.csv");
    std::vector<std::string> id_list;
    for (size_t r = 0; r < ids.rows.size(); ++r) id_list.push_back(ids.at(r, "sample_id"));
    for (const char* name : {"baseline", "identity-dir", "bert_like-val", "inv_first-dir"}) {
        auto atk = ilm::read_csv(cfg.csv_dir() + std::string("/attack_") + name + ".csv");
        REQUIRE(atk.rows.size() == id_list.size());
        for (size_t r = 0; r < atk.rows.size(); ++r)
            CHECK(atk.at(r, "sample_id") == id_list[r]);
    }

    CHECK(fs::exists(cfg.csv_dir() + "/success_curve.csv"));
    CHECK(fs::exists(cfg.plots_dir() + "/success_curve.svg"));
    CHECK(fs::exists(cfg.csv_dir() + "/pag_robustness.csv"));

    std::ostringstream report;
    ilm::write_report(cfg.out_dir, report);
    auto t3 = ilm::read_csv(cfg.csv_dir() + "/report_inversion_tokens.csv");
    CHECK(t3.rows.size() == 7);
    auto t5 = ilm::read_csv(cfg.csv_dir() + "/report_attack_success.csv");
    CHECK(t5.rows.size() == 7);
}

TEST_CASE("cli exit codes: usage errors are 2, success is 0") {
#ifdef ILM_CLI_PATH
    Workspace ws;
    std::string cli = ILM_CLI_PATH;
    auto run = [&](const std::string& args) {
        int rc = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(rc);
    };
    CHECK(run("--no-such-flag") == 2);
    CHECK(run("train --bogus") == 2);

    std::ofstream bad(ws.root + "/bad.json");
    bad << "{invalid";
    bad.close();
    CHECK(run("train --config " + ws.root + "/bad.json") == 2);

    CHECK(run("gen-corpus --out " + ws.root + "/c.txt --min-chars 2000 --seed 3") == 0);
    CHECK(fs::exists(ws.root + "/c.txt"));

    // missing checkpoint is a runtime error, not a usage error
    std::ofstream cfgf(ws.root + "/cfg.json");
    cfgf << "{\"out_dir\": \"" << ws.root << "/none\", \"corpus\": \"" << ws.root
         << "/c.txt\", \"tokenizer\": \"" << ws.root << "/none/tok.json\"}";
    cfgf.close();
    CHECK(run("eval-forward --config " + ws.root + "/cfg.json") == 1);
#endif
}

// SPDX-License-Identifier: Apache-2.0
#include "ilm/harness.hpp"

#include "ilm/checkpoint.hpp"
#include "ilm/csv.hpp"
#include "ilm/plot.hpp"
#include "ilm/textgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace ilm {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void ensure_dirs(const ExperimentConfig& cfg) {
    for (const std::string& d : {cfg.out_dir, cfg.csv_dir(), cfg.ckpt_dir(), cfg.plots_dir(),
                                 cfg.samples_dir(), cfg.out_dir + "/cache"})
        fs::create_directories(d);
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) fail(what + " not found: " + path);
}

std::string seed_comment(const ExperimentConfig& cfg) {
    return "seeds data=" + std::to_string(cfg.seeds.data) + " model=" +
           std::to_string(cfg.seeds.model) + " train=" + std::to_string(cfg.seeds.train) +
           " eval=" + std::to_string(cfg.seeds.eval) + " attack=" +
           std::to_string(cfg.seeds.attack) + " pag=" + std::to_string(cfg.seeds.pag) +
           " reference=" + std::to_string(cfg.seeds.reference);
}

std::string cache_stem(const ExperimentConfig& cfg) {
    std::string key = cfg.corpus + "|" + std::to_string(fs::exists(cfg.corpus)
                                                            ? fs::file_size(cfg.corpus)
                                                            : 0) +
                      "|" + std::to_string(cfg.vocab_size) + "|" + std::to_string(cfg.seq_len) +
                      "|" + CsvWriter::num(cfg.overlap) + "|" + std::to_string(cfg.seeds.data) +
                      "|" + CsvWriter::num(cfg.train_frac) + "|" + CsvWriter::num(cfg.val_frac) +
                      "|" + CsvWriter::num(cfg.reference_frac);
    std::ostringstream ss;
    ss << cfg.out_dir << "/cache/" << std::hex << fnv1a(key);
    return ss.str();
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double sq = 0;
    for (double x : v) sq += (x - m) * (x - m);
    return std::sqrt(sq / static_cast<double>(v.size()));
}

}  // namespace

void cmd_tokenize_train(const ExperimentConfig& cfg) {
    require_file(cfg.corpus, "corpus");
    if (cfg.tokenizer.empty()) fail("config: tokenizer path is empty");
    ensure_dirs(cfg);
    std::ifstream f(cfg.corpus, std::ios::binary);
    Tokenizer tok = Tokenizer::train(f, cfg.vocab_size);
    fs::create_directories(fs::path(cfg.tokenizer).parent_path().empty()
                               ? "."
                               : fs::path(cfg.tokenizer).parent_path().string());
    tok.save(cfg.tokenizer);
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
    require_file(cfg.corpus, "corpus");
    require_file(cfg.tokenizer, "tokenizer");
    ensure_dirs(cfg);

    PreparedData data;
    data.tok = Tokenizer::load(cfg.tokenizer);
    if (data.tok.vocab_size() != cfg.model.vocab_size)
        fail("prepare_data: tokenizer vocab " + std::to_string(data.tok.vocab_size()) +
             " does not match model vocab " + std::to_string(cfg.model.vocab_size));

    std::string stem = cache_stem(cfg);
    std::string train_p = stem + "_train.bin", val_p = stem + "_val.bin",
                test_p = stem + "_test.bin", ref_p = stem + "_ref.bin";
    if (fs::exists(train_p) && fs::exists(val_p) && fs::exists(test_p) && fs::exists(ref_p)) {
        data.main.train = load_dataset(train_p);
        data.main.val = load_dataset(val_p);
        data.main.test = load_dataset(test_p);
        data.reference_train = load_dataset(ref_p);
    } else {
        auto docs = encode_corpus_file(data.tok, cfg.corpus);
        if (docs.empty()) fail("prepare_data: corpus has no documents");

        // hold out a disjoint shard for the reference model, then split the rest
        std::vector<size_t> order(docs.size());
        std::iota(order.begin(), order.end(), size_t{0});
        auto rng = make_rng(cfg.seeds.data, 0x0d0c5);
        std::shuffle(order.begin(), order.end(), rng);
        size_t n_ref = static_cast<size_t>(cfg.reference_frac * static_cast<double>(docs.size()));
        std::vector<std::vector<int>> ref_docs, main_docs;
        for (size_t i = 0; i < order.size(); ++i)
            (i < n_ref ? ref_docs : main_docs).push_back(docs[order[i]]);

        data.main = build_splits(main_docs, cfg.seq_len, cfg.overlap, cfg.train_frac, cfg.val_frac,
                                 cfg.seeds.data);
        ChunkedDataset ref_all;
        ref_all.seq_len = cfg.seq_len;
        for (const auto& doc : ref_docs) {
            ChunkedDataset c = chunk(doc, cfg.seq_len, cfg.overlap);
            for (auto& s : c.sequences) ref_all.sequences.push_back(std::move(s));
        }
        data.reference_train = std::move(ref_all);

        save_dataset(data.main.train, train_p);
        save_dataset(data.main.val, val_p);
        save_dataset(data.main.test, test_p);
        save_dataset(data.reference_train, ref_p);
    }

    if (data.main.train.sequences.empty() || data.main.val.sequences.empty() ||
        data.main.test.sequences.empty())
        fail("prepare_data: a split came out empty; corpus too small for the configuration");
    if (data.reference_train.sequences.empty())
        fail("prepare_data: reference shard is empty; corpus too small");

    data.bigram = train_bigram(data.main.train, data.tok.vocab_size(), data.tok.pad_id());
    return data;
}

long long resolve_steps(const ExperimentConfig& cfg, size_t train_sequences) {
    if (cfg.train.steps > 0) return cfg.train.steps;
    long long per_epoch = std::max<long long>(
        1, static_cast<long long>(train_sequences) / cfg.train.batch_size);
    return per_epoch * cfg.train.epochs;
}

VariantRun run_training(const ExperimentConfig& cfg, const IlmVariantSpec& spec,
                        PreparedData& data) {
    ensure_dirs(cfg);
    save_config(cfg, cfg.out_dir + "/config.json");

    ModelConfig mc = cfg.model;
    mc.seed = cfg.seeds.model;
    auto params = init_model<float>(mc);

    TrainOptions opt;
    opt.steps = resolve_steps(cfg, data.main.train.sequences.size());
    opt.batch_size = cfg.train.batch_size;
    opt.adam.lr = cfg.train.lr;
    opt.warmup_frac = cfg.train.warmup_frac;
    opt.clip = cfg.train.clip;
    opt.seed = cfg.seeds.train;
    opt.log_every = cfg.train.log_every;
    opt.ckpt_every = cfg.train.ckpt_every;
    opt.val_samples = cfg.train.val_samples;
    opt.val = &data.main.val;
    opt.ckpt_dir = cfg.ckpt_dir() + "/" + spec.name();
    opt.log_csv = cfg.csv_dir() + "/train_" + spec.name() + ".csv";

    VariantRun run;
    run.spec = spec;
    run.result = train(params, data.main.train, spec, data.tok.pad_id(), opt);
    run.checkpoint = run.result.final_checkpoint;
    if (run.result.halted_non_finite)
        fail("training halted on a non-finite loss for variant " + spec.name());
    return run;
}

std::string train_reference(const ExperimentConfig& cfg, PreparedData& data) {
    ensure_dirs(cfg);
    ModelConfig mc = cfg.model;
    mc.seed = cfg.seeds.reference;
    auto params = init_model<float>(mc);

    IlmVariantSpec spec;  // baseline
    spec.variant = Variant::baseline;

    TrainOptions opt;
    long long per_epoch = std::max<long long>(
        1, static_cast<long long>(data.reference_train.sequences.size()) / cfg.train.batch_size);
    opt.steps = per_epoch * cfg.train.epochs;
    opt.batch_size = cfg.train.batch_size;
    opt.adam.lr = cfg.train.lr;
    opt.warmup_frac = cfg.train.warmup_frac;
    opt.clip = cfg.train.clip;
    opt.seed = cfg.seeds.reference;
    opt.log_every = cfg.train.log_every;
    opt.ckpt_dir = cfg.ckpt_dir() + "/reference";
    opt.log_csv = cfg.csv_dir() + "/train_reference.csv";

    auto res = train(params, data.reference_train, spec, data.tok.pad_id(), opt);
    if (res.halted_non_finite) fail("reference training halted on a non-finite loss");
    return res.final_checkpoint;
}

ModelParams<float> load_variant_model(const ExperimentConfig& cfg, const IlmVariantSpec& spec) {
    std::string path = cfg.ckpt_dir() + "/" + spec.name() + "/final.ckpt";
    require_file(path, "checkpoint for " + spec.name());
    return load_checkpoint(path).params;
}

ModelParams<float> load_reference_model(const ExperimentConfig& cfg) {
    std::string path = cfg.ckpt_dir() + "/reference/final.ckpt";
    require_file(path, "reference checkpoint");
    return load_checkpoint(path).params;
}

ForwardEvalRow eval_forward(const ExperimentConfig& cfg, ModelParams<float>& params,
                            const IlmVariantSpec& spec, PreparedData& data) {
    ForwardEvalRow row;
    row.variant = to_string(spec.variant);
    row.grad_mode = spec.variant == Variant::baseline ? "" : to_string(spec.grad_mode);
    row.n = cfg.eval.forward_samples;

    auto ce_over = [&](const ChunkedDataset& ds) {
        size_t n = std::min<size_t>(cfg.eval.forward_samples, ds.sequences.size());
        std::vector<size_t> order(ds.sequences.size());
        std::iota(order.begin(), order.end(), size_t{0});
        auto rng = make_rng(cfg.seeds.eval, 0xf0f);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<double> ce(n);
        parallel_for(static_cast<int>(n), [&](int i) {
            const auto& x = ds.sequences[order[i]];
            NoGradGuard ng;
            auto t = forward(params, x);
            std::vector<int> targets(x.begin() + 1, x.end());
            ce[i] = cross_entropy(block(t.logits, 0, 0, static_cast<Index>(x.size()) - 1,
                                        t.logits.cols()),
                                  targets)
                        .item();
        });
        return mean_of(ce);
    };
    row.val_ce = ce_over(data.main.val);
    row.val_ppl = std::exp(row.val_ce);
    row.test_ce = ce_over(data.main.test);
    row.test_ppl = std::exp(row.test_ce);
    row.readout_acc = inverse_lm_accuracy(params, data.main.test.sequences, spec,
                                          cfg.eval.readout_samples, data.tok.pad_id(),
                                          cfg.seeds.eval);
    return row;
}

void write_forward_eval_csv(const ExperimentConfig& cfg, const std::vector<ForwardEvalRow>& rows) {
    CsvWriter csv(cfg.csv_dir() + "/forward_eval.csv",
                  {"variant", "grad_mode", "val_ppl", "val_ce", "test_ppl", "test_ce",
                   "readout_acc", "n", "seed"},
                  seed_comment(cfg));
    for (const auto& r : rows)
        csv.row({r.variant, r.grad_mode, CsvWriter::num(r.val_ppl), CsvWriter::num(r.val_ce),
                 CsvWriter::num(r.test_ppl), CsvWriter::num(r.test_ce),
                 CsvWriter::num(r.readout_acc), CsvWriter::num(static_cast<long long>(r.n)),
                 CsvWriter::num(static_cast<long long>(cfg.seeds.eval))});
}

InversionAggregate eval_inversion(const ExperimentConfig& cfg, ModelParams<float>& params,
                                  const IlmVariantSpec& spec, ModelParams<float>& reference,
                                  PreparedData& data) {
    ensure_dirs(cfg);
    const auto& test = data.main.test.sequences;
    if (test.empty()) fail("eval_inversion: empty test split");

    int n = std::min<int>(cfg.eval.inversion_samples, static_cast<int>(test.size()));
    std::vector<size_t> order(test.size());
    std::iota(order.begin(), order.end(), size_t{0});
    auto rng = make_rng(cfg.seeds.eval, 0x1457);
    std::shuffle(order.begin(), order.end(), rng);

    int k = std::max(1, static_cast<int>(std::lround(cfg.eval.k_frac * cfg.seq_len)));

    struct Row {
        size_t sample_id;
        TokenMetrics tm;
        PerplexityReport pr;
        double ss;
        std::vector<int> pred;
    };
    std::vector<Row> rows(n);
    parallel_for(n, [&](int i) {
        const auto& x = test[order[i]];
        InversionTask task;
        task.sample = x;
        task.split = std::min<int>(k, static_cast<int>(x.size()) - 1);
        task.beam = cfg.eval.beam;
        task.init = init_strategy_for(spec);
        std::vector<int> pred =
            invert_prefix(params, task, spec, data.tok.pad_id(), &data.bigram);
        std::vector<int> ref_prefix(x.begin(), x.begin() + task.split);
        std::vector<int> suffix(x.begin() + task.split, x.end());
        rows[i] = {order[i], token_metrics(pred, ref_prefix),
                   perplexity_report(reference, pred, suffix, ref_prefix),
                   semantic_similarity_proxy(reference, pred, ref_prefix), pred};
    });

    std::string name = spec.name();
    CsvWriter csv(cfg.csv_dir() + "/inversion_" + name + ".csv",
                  {"sample_id", "variant", "grad_mode", "rec", "prec", "f1", "acc", "opp", "ppp",
                   "fpp", "ss_proxy", "seed"},
                  seed_comment(cfg));
    std::ofstream dump(cfg.samples_dir() + "/inversion_" + name + ".txt", std::ios::binary);

    InversionAggregate agg;
    agg.variant = to_string(spec.variant);
    agg.grad_mode = spec.variant == Variant::baseline ? "" : to_string(spec.grad_mode);
    agg.n = n;
    std::vector<double> opps, ppps, fpps;
    for (const auto& r : rows) {
        csv.row({CsvWriter::num(static_cast<long long>(r.sample_id)), agg.variant, agg.grad_mode,
                 CsvWriter::num(r.tm.recall), CsvWriter::num(r.tm.precision),
                 CsvWriter::num(r.tm.f1), CsvWriter::num(r.tm.positional_accuracy),
                 r.pr.opp ? CsvWriter::num(*r.pr.opp) : "", r.pr.ppp ? CsvWriter::num(*r.pr.ppp) : "",
                 r.pr.fpp ? CsvWriter::num(*r.pr.fpp) : "", CsvWriter::num(r.ss),
                 CsvWriter::num(static_cast<long long>(cfg.seeds.eval))});
        agg.rec += r.tm.recall;
        agg.prec += r.tm.precision;
        agg.f1 += r.tm.f1;
        agg.acc += r.tm.positional_accuracy;
        agg.ss_proxy += r.ss;
        if (r.pr.opp) opps.push_back(*r.pr.opp);
        if (r.pr.ppp) ppps.push_back(*r.pr.ppp);
        if (r.pr.fpp) fpps.push_back(*r.pr.fpp);

        const auto& x = test[r.sample_id];
        int split = static_cast<int>(r.pred.size());
        dump << "sample " << r.sample_id << "\n";
        dump << "  original prefix: "
             << data.tok.decode(std::vector<int>(x.begin(), x.begin() + split)) << "\n";
        dump << "  inverted prefix: " << data.tok.decode(r.pred) << "\n";
        dump << "  visible suffix : "
             << data.tok.decode(std::vector<int>(x.begin() + split, x.end())) << "\n\n";
    }
    agg.rec /= n;
    agg.prec /= n;
    agg.f1 /= n;
    agg.acc /= n;
    agg.ss_proxy /= n;
    agg.opp = mean_of(opps);
    agg.ppp = mean_of(ppps);
    agg.fpp = mean_of(fpps);
    return agg;
}

std::vector<int> attack_sample_ids(const ExperimentConfig& cfg, size_t test_size) {
    if (test_size == 0) fail("attack_sample_ids: empty test split");
    std::vector<int> ids(test_size);
    std::iota(ids.begin(), ids.end(), 0);
    auto rng = make_rng(cfg.seeds.attack, 0x5a3);
    std::shuffle(ids.begin(), ids.end(), rng);
    size_t want = std::min<size_t>(
        cfg.gcg.max_samples,
        std::max<size_t>(1, static_cast<size_t>(cfg.gcg.sample_frac *
                                                static_cast<double>(test_size))));
    ids.resize(std::min(want, test_size));
    std::sort(ids.begin(), ids.end());

    CsvWriter csv(cfg.csv_dir() + "/attack_samples.csv", {"sample_id", "seed"}, seed_comment(cfg));
    for (int id : ids)
        csv.row({CsvWriter::num(static_cast<long long>(id)),
                 CsvWriter::num(static_cast<long long>(cfg.seeds.attack))});
    return ids;
}

AttackAggregate eval_attack(const ExperimentConfig& cfg, ModelParams<float>& params,
                            const IlmVariantSpec& spec, ModelParams<float>& reference,
                            PreparedData& data, std::vector<AttackRecord>* records_out) {
    ensure_dirs(cfg);
    const auto& test = data.main.test.sequences;
    auto ids = attack_sample_ids(cfg, test.size());

    std::vector<AttackRecord> records(ids.size());
    parallel_for(static_cast<int>(ids.size()), [&](int i) {
        const auto& seq = test[ids[i]];
        int x_len = std::min<int>(cfg.gcg.x_len, static_cast<int>(seq.size()) - 1);
        int y_len = std::min<int>(cfg.gcg.y_len, static_cast<int>(seq.size()) - x_len);
        AttackRecord rec;
        rec.sample_id = ids[i];
        rec.x.assign(seq.begin(), seq.begin() + x_len);
        rec.y.assign(seq.begin() + x_len, seq.begin() + x_len + y_len);

        GcgConfig attack_cfg = cfg.gcg.attack;
        attack_cfg.seed = mix_seed(cfg.seeds.attack, static_cast<std::uint64_t>(ids[i]));
        rec.core = gcg_attack(params, rec.y, attack_cfg);
        evaluate_success_timeline(params, rec);
        rec.metrics = attack_metrics(params, reference, rec.x, rec.core.best_prefix, rec.y);
        records[i] = std::move(rec);
    });

    std::string name = spec.name();
    CsvWriter csv(cfg.csv_dir() + "/attack_" + name + ".csv",
                  {"sample_id", "variant", "grad_mode", "success", "match_frac", "steps",
                   "ce_orig", "ce_attack", "delta", "kl", "ppl_orig_prefix", "ppl_attack_prefix",
                   "seed"},
                  seed_comment(cfg));
    std::ofstream dump(cfg.samples_dir() + "/attack_" + name + ".txt", std::ios::binary);

    AttackAggregate agg;
    agg.variant = to_string(spec.variant);
    agg.grad_mode = spec.variant == Variant::baseline ? "" : to_string(spec.grad_mode);
    agg.n = static_cast<int>(records.size());
    std::vector<double> steps, ce_o, ce_a, deltas, kls, ppl_o, ppl_a;
    for (const auto& r : records) {
        csv.row({CsvWriter::num(static_cast<long long>(r.sample_id)), agg.variant, agg.grad_mode,
                 r.success() ? "1" : "0", CsvWriter::num(r.match_fraction),
                 CsvWriter::num(static_cast<long long>(r.core.iterations)),
                 CsvWriter::num(r.metrics.ce_orig), CsvWriter::num(r.metrics.ce_attack),
                 CsvWriter::num(r.metrics.delta), CsvWriter::num(r.metrics.kl),
                 CsvWriter::num(r.metrics.ppl_orig_prefix),
                 CsvWriter::num(r.metrics.ppl_attack_prefix),
                 CsvWriter::num(static_cast<long long>(cfg.seeds.attack))});
        steps.push_back(r.core.iterations);
        if (r.success()) {
            agg.n_success += 1;
            ce_o.push_back(r.metrics.ce_orig);
            ce_a.push_back(r.metrics.ce_attack);
            deltas.push_back(r.metrics.delta);
            kls.push_back(r.metrics.kl);
            ppl_o.push_back(r.metrics.ppl_orig_prefix);
            ppl_a.push_back(r.metrics.ppl_attack_prefix);
        }
        dump << "sample " << r.sample_id << (r.success() ? " [success]" : " [failed]") << "\n";
        dump << "  x : " << data.tok.decode(r.x) << "\n";
        dump << "  x*: " << data.tok.decode(r.core.best_prefix) << "\n";
        dump << "  y : " << data.tok.decode(r.y) << "\n";
        dump << "  ce(x)=" << CsvWriter::num(r.metrics.ce_orig)
             << " ce(x*)=" << CsvWriter::num(r.metrics.ce_attack) << "\n\n";
    }
    agg.asr = records.empty() ? 0.0 : static_cast<double>(agg.n_success) / records.size();
    agg.mean_steps = mean_of(steps);
    agg.std_steps = stddev_of(steps);
    agg.ce_orig = mean_of(ce_o);
    agg.ce_attack = mean_of(ce_a);
    agg.delta = mean_of(deltas);
    agg.kl = mean_of(kls);
    agg.ppl_orig = mean_of(ppl_o);
    agg.ppl_attack = mean_of(ppl_a);

    // per-variant success curve, CSV + SVG
    std::vector<int> checkpoints;
    for (int c = 0; c <= cfg.gcg.attack.max_iters; c += cfg.gcg.curve_every)
        checkpoints.push_back(c);
    if (checkpoints.back() != cfg.gcg.attack.max_iters)
        checkpoints.push_back(cfg.gcg.attack.max_iters);
    auto curve = success_curve(records, checkpoints);
    PlotSeries series;
    series.name = name;
    for (const auto& cp : curve)
        series.points.emplace_back(static_cast<double>(cp.iteration), cp.success_rate);
    emit_plot({series}, "GCG success rate by iteration budget", "iterations", "success rate",
              cfg.csv_dir() + "/success_curve_" + name + ".csv",
              cfg.plots_dir() + "/success_curve_" + name + ".svg", seed_comment(cfg));

    if (records_out) *records_out = std::move(records);
    return agg;
}

PagStudyResult run_pag_study(const ExperimentConfig& cfg, ModelParams<float>& encoder) {
    ensure_dirs(cfg);
    require_file(cfg.tokenizer, "tokenizer");
    Tokenizer tok = Tokenizer::load(cfg.tokenizer);

    HiddenDataset all = build_hidden_dataset(encoder, tok, cfg.pag.per_class, cfg.seeds.pag);

    // per-class 75/25 split into train and eval halves
    HiddenDataset train_ds, eval_ds;
    train_ds.dim = eval_ds.dim = all.dim;
    train_ds.by_class.resize(all.by_class.size());
    eval_ds.by_class.resize(all.by_class.size());
    for (size_t c = 0; c < all.by_class.size(); ++c) {
        const auto& pool = all.by_class[c];
        size_t n_train = std::max<size_t>(2, pool.size() * 3 / 4);
        for (size_t i = 0; i < pool.size(); ++i) {
            HiddenDataset& dst = i < n_train ? train_ds : eval_ds;
            dst.by_class[c].push_back(static_cast<int>(dst.h.size()));
            dst.h.push_back(all.h[pool[i]]);
            dst.y.push_back(all.y[pool[i]]);
        }
    }

    PagTrainOptions opt;
    opt.epochs = cfg.pag.epochs;
    opt.batch_size = cfg.pag.batch_size;
    opt.adam.lr = cfg.pag.lr;
    opt.seed = cfg.seeds.pag;

    auto make_cfg = [&](ProxyMode mode, double lambda) {
        PagConfig pc;
        pc.classes = textgen::kNumTopics;
        pc.proxy = mode;
        pc.lambda = lambda;
        pc.seed = cfg.seeds.pag;
        return pc;
    };

    Classifier base = init_classifier(all.dim, textgen::kNumTopics, cfg.seeds.pag);
    Classifier ident = init_classifier(all.dim, textgen::kNumTopics, cfg.seeds.pag);
    Classifier pag = init_classifier(all.dim, textgen::kNumTopics, cfg.seeds.pag);
    train_classifier(base, train_ds, make_cfg(ProxyMode::none, 0.0), opt);
    train_classifier(ident, train_ds, make_cfg(ProxyMode::identity, cfg.pag.lambda), opt);
    train_classifier(pag, train_ds, make_cfg(ProxyMode::pag, cfg.pag.lambda), opt);

    PagStudyResult out;
    out.rows = robust_eval({{"baseline", &base}, {"identity", &ident}, {"pag", &pag}}, eval_ds,
                           cfg.pag.alpha_grid);

    CsvWriter csv(cfg.csv_dir() + "/pag_robustness.csv",
                  {"proxy_mode", "alpha", "clean_acc", "attacked_acc", "n", "seed"},
                  seed_comment(cfg));
    for (const auto& r : out.rows)
        csv.row({r.proxy_mode, CsvWriter::num(r.alpha), CsvWriter::num(r.clean_acc),
                 CsvWriter::num(r.attacked_acc),
                 CsvWriter::num(static_cast<long long>(eval_ds.size())),
                 CsvWriter::num(static_cast<long long>(cfg.seeds.pag))});

    // smallest alpha where the baseline drops at least 20 points from clean
    for (const auto& r : out.rows)
        if (r.proxy_mode == "baseline" && r.clean_acc - r.attacked_acc >= 0.20) {
            out.calibrated_alpha = r.alpha;
            break;
        }
    return out;
}

namespace {

std::vector<CsvFile> read_prefixed(const std::string& dir, const std::string& prefix) {
    std::vector<std::string> paths;
    if (fs::exists(dir))
        for (const auto& e : fs::directory_iterator(dir)) {
            std::string name = e.path().filename().string();
            if (name.rfind(prefix, 0) == 0 && name.size() > 4 &&
                name.substr(name.size() - 4) == ".csv")
                paths.push_back(e.path().string());
        }
    std::sort(paths.begin(), paths.end());
    std::vector<CsvFile> out;
    for (const auto& p : paths) out.push_back(read_csv(p));
    return out;
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * v);
    return buf;
}

}  // namespace

void write_report(const std::string& run_dir, std::ostream& out) {
    const std::string csv_dir = run_dir + "/csv";
    if (!fs::exists(csv_dir)) fail("report: no csv directory under " + run_dir);

    // forward-mode table
    if (fs::exists(csv_dir + "/forward_eval.csv")) {
        CsvFile f = read_csv(csv_dir + "/forward_eval.csv");
        CsvWriter rep(csv_dir + "/report_forward.csv",
                      {"variant", "grad_mode", "test_ppl", "test_ce", "readout_acc", "n", "seed"},
                      f.comment);
        out << "\n== forward mode (test split) ==\n";
        for (size_t r = 0; r < f.rows.size(); ++r) {
            rep.row({f.at(r, "variant"), f.at(r, "grad_mode"), f.at(r, "test_ppl"),
                     f.at(r, "test_ce"), f.at(r, "readout_acc"), f.at(r, "n"), f.at(r, "seed")});
            out << "  " << f.at(r, "variant") << " " << f.at(r, "grad_mode") << ": ppl "
                << f.at(r, "test_ppl") << ", ce " << f.at(r, "test_ce") << ", readout acc "
                << pct(std::stod(f.at(r, "readout_acc"))) << "\n";
        }
    }

    // inversion tables
    auto inv_files = read_prefixed(csv_dir, "inversion_");
    if (!inv_files.empty()) {
        CsvWriter t3(csv_dir + "/report_inversion_tokens.csv",
                     {"variant", "grad_mode", "rec", "prec", "f1", "acc", "n", "seed"});
        CsvWriter t4(csv_dir + "/report_inversion_sentences.csv",
                     {"variant", "grad_mode", "opp", "fpp", "ppp", "ss_proxy", "n", "seed"});
        out << "\n== inversion ==\n";
        for (const auto& f : inv_files) {
            if (f.rows.empty()) continue;
            double rec = 0, prec = 0, f1 = 0, acc = 0, ss = 0;
            std::vector<double> opp, ppp, fpp;
            for (size_t r = 0; r < f.rows.size(); ++r) {
                rec += f.num_at(r, "rec");
                prec += f.num_at(r, "prec");
                f1 += f.num_at(r, "f1");
                acc += f.num_at(r, "acc");
                ss += f.num_at(r, "ss_proxy");
                if (!f.at(r, "opp").empty()) opp.push_back(f.num_at(r, "opp"));
                if (!f.at(r, "ppp").empty()) ppp.push_back(f.num_at(r, "ppp"));
                if (!f.at(r, "fpp").empty()) fpp.push_back(f.num_at(r, "fpp"));
            }
            double n = static_cast<double>(f.rows.size());
            std::string variant = f.at(0, "variant"), mode = f.at(0, "grad_mode");
            t3.row({variant, mode, CsvWriter::num(rec / n), CsvWriter::num(prec / n),
                    CsvWriter::num(f1 / n), CsvWriter::num(acc / n),
                    CsvWriter::num(static_cast<long long>(f.rows.size())), f.at(0, "seed")});
            t4.row({variant, mode, CsvWriter::num(mean_of(opp)), CsvWriter::num(mean_of(fpp)),
                    CsvWriter::num(mean_of(ppp)), CsvWriter::num(ss / n),
                    CsvWriter::num(static_cast<long long>(f.rows.size())), f.at(0, "seed")});
            out << "  " << variant << " " << mode << ": rec " << pct(rec / n) << ", prec "
                << pct(prec / n) << ", f1 " << pct(f1 / n) << ", acc " << pct(acc / n) << ", opp "
                << CsvWriter::num(mean_of(opp)) << ", ppp " << CsvWriter::num(mean_of(ppp))
                << ", fpp " << CsvWriter::num(mean_of(fpp)) << "\n";
        }
    }

    // attack tables
    auto atk_files = read_prefixed(csv_dir, "attack_");
    bool have_attacks = false;
    for (const auto& f : atk_files)
        if (!f.rows.empty() && f.columns.size() > 2) have_attacks = true;
    if (have_attacks) {
        CsvWriter t5(csv_dir + "/report_attack_success.csv",
                     {"variant", "grad_mode", "success_rate", "mean_steps", "std_steps", "n",
                      "seed"});
        CsvWriter t6(csv_dir + "/report_attack_ce.csv",
                     {"variant", "grad_mode", "ce_orig", "ce_attack", "delta", "kl", "n_success",
                      "seed"});
        CsvWriter t7(csv_dir + "/report_attack_ppl.csv",
                     {"variant", "grad_mode", "ppl_orig", "ppl_attack", "n_success", "seed"});
        out << "\n== GCG attacks ==\n";
        for (const auto& f : atk_files) {
            if (f.rows.empty() || f.columns.size() <= 2) continue;  // skip the id list
            double succ = 0;
            std::vector<double> steps, ce_o, ce_a, dl, kl, po, pa;
            for (size_t r = 0; r < f.rows.size(); ++r) {
                bool s = f.at(r, "success") == "1";
                succ += s ? 1 : 0;
                steps.push_back(f.num_at(r, "steps"));
                if (s) {
                    ce_o.push_back(f.num_at(r, "ce_orig"));
                    ce_a.push_back(f.num_at(r, "ce_attack"));
                    dl.push_back(f.num_at(r, "delta"));
                    kl.push_back(f.num_at(r, "kl"));
                    po.push_back(f.num_at(r, "ppl_orig_prefix"));
                    pa.push_back(f.num_at(r, "ppl_attack_prefix"));
                }
            }
            double n = static_cast<double>(f.rows.size());
            std::string variant = f.at(0, "variant"), mode = f.at(0, "grad_mode");
            t5.row({variant, mode, CsvWriter::num(succ / n), CsvWriter::num(mean_of(steps)),
                    CsvWriter::num(stddev_of(steps)),
                    CsvWriter::num(static_cast<long long>(f.rows.size())), f.at(0, "seed")});
            t6.row({variant, mode, CsvWriter::num(mean_of(ce_o)), CsvWriter::num(mean_of(ce_a)),
                    CsvWriter::num(mean_of(dl)), CsvWriter::num(mean_of(kl)),
                    CsvWriter::num(static_cast<long long>(ce_o.size())), f.at(0, "seed")});
            t7.row({variant, mode, CsvWriter::num(mean_of(po)), CsvWriter::num(mean_of(pa)),
                    CsvWriter::num(static_cast<long long>(po.size())), f.at(0, "seed")});
            out << "  " << variant << " " << mode << ": success " << pct(succ / n) << ", steps "
                << CsvWriter::num(mean_of(steps)) << " +- " << CsvWriter::num(stddev_of(steps))
                << ", delta " << CsvWriter::num(mean_of(dl)) << ", kl "
                << CsvWriter::num(mean_of(kl)) << "\n";
        }
    }

    // robustness table
    if (fs::exists(csv_dir + "/pag_robustness.csv")) {
        CsvFile f = read_csv(csv_dir + "/pag_robustness.csv");
        CsvWriter t2(csv_dir + "/report_pag.csv",
                     {"proxy_mode", "alpha", "clean_acc", "attacked_acc", "n", "seed"});
        out << "\n== classification robustness (FGSM) ==\n";
        for (size_t r = 0; r < f.rows.size(); ++r) {
            t2.row({f.at(r, "proxy_mode"), f.at(r, "alpha"), f.at(r, "clean_acc"),
                    f.at(r, "attacked_acc"), f.at(r, "n"), f.at(r, "seed")});
            out << "  " << f.at(r, "proxy_mode") << " alpha=" << f.at(r, "alpha") << ": clean "
                << pct(f.num_at(r, "clean_acc")) << ", attacked "
                << pct(f.num_at(r, "attacked_acc")) << "\n";
        }
    }
    out << "\n";
}

void run_matrix(const ExperimentConfig& cfg, std::ostream& log) {
    ensure_dirs(cfg);
    PreparedData data = prepare_data(cfg);
    save_config(cfg, cfg.out_dir + "/config.json");

    CsvWriter errors(cfg.csv_dir() + "/errors.csv", {"stage", "variant", "message"});

    log << "training reference model\n";
    train_reference(cfg, data);
    auto reference = load_reference_model(cfg);

    auto variants = matrix_variants(cfg.variant);
    std::vector<ForwardEvalRow> fwd_rows;
    std::vector<PlotSeries> curves;

    for (const auto& spec : variants) {
        const std::string name = spec.name();
        try {
            log << "training " << name << "\n";
            run_training(cfg, spec, data);
            auto params = load_variant_model(cfg, spec);

            log << "  forward eval\n";
            fwd_rows.push_back(eval_forward(cfg, params, spec, data));

            log << "  inversion eval\n";
            eval_inversion(cfg, params, spec, reference, data);

            log << "  gcg attacks\n";
            std::vector<AttackRecord> records;
            eval_attack(cfg, params, spec, reference, data, &records);
            auto curve_csv = read_plot_csv(cfg.csv_dir() + "/success_curve_" + name + ".csv");
            for (auto& s : curve_csv) curves.push_back(std::move(s));
        } catch (const Error& e) {
            log << "  cell failed: " << e.what() << "\n";
            errors.row({"variant", name, e.what()});
        }
    }
    if (!fwd_rows.empty()) write_forward_eval_csv(cfg, fwd_rows);
    if (!curves.empty())
        emit_plot(curves, "GCG success rate by iteration budget", "iterations", "success rate",
                  cfg.csv_dir() + "/success_curve.csv", cfg.plots_dir() + "/success_curve.svg",
                  seed_comment(cfg));

    try {
        log << "pag study on the baseline encoder\n";
        IlmVariantSpec base;
        base.variant = Variant::baseline;
        auto encoder = load_variant_model(cfg, base);
        run_pag_study(cfg, encoder);
    } catch (const Error& e) {
        log << "  pag study failed: " << e.what() << "\n";
        errors.row({"pag", "", e.what()});
    }

    write_report(cfg.out_dir, log);
}

}  // namespace ilm

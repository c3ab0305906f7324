// SPDX-License-Identifier: Apache-2.0
#include "ilm/config.hpp"

#include "json.hpp"

#include <fstream>

namespace ilm {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) fail_usage("config: unknown key \"" + it.key() + "\" in " + where);
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail_usage("config: cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        fail_usage("config: malformed JSON in " + path + ": " + e.what());
    }

    ExperimentConfig cfg;
    check_keys(j,
               {"out_dir", "corpus", "tokenizer", "vocab_size", "seq_len", "overlap", "train_frac",
                "val_frac", "reference_frac", "model", "variant", "train", "eval", "gcg", "pag",
                "seeds"},
               "top level");
    get_if(j, "out_dir", cfg.out_dir);
    get_if(j, "corpus", cfg.corpus);
    get_if(j, "tokenizer", cfg.tokenizer);
    get_if(j, "vocab_size", cfg.vocab_size);
    get_if(j, "seq_len", cfg.seq_len);
    get_if(j, "overlap", cfg.overlap);
    get_if(j, "train_frac", cfg.train_frac);
    get_if(j, "val_frac", cfg.val_frac);
    get_if(j, "reference_frac", cfg.reference_frac);

    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq_len",
                       "ln_eps", "seed"},
                   "model");
        get_if(m, "n_layers", cfg.model.n_layers);
        get_if(m, "d_model", cfg.model.d_model);
        cfg.model.n_heads = std::max(2, cfg.model.d_model / 64);
        while (cfg.model.d_model % cfg.model.n_heads != 0) --cfg.model.n_heads;
        cfg.model.d_ff = 4 * cfg.model.d_model;
        get_if(m, "n_heads", cfg.model.n_heads);
        get_if(m, "d_ff", cfg.model.d_ff);
        get_if(m, "vocab_size", cfg.model.vocab_size);
        get_if(m, "max_seq_len", cfg.model.max_seq_len);
        get_if(m, "ln_eps", cfg.model.ln_eps);
        get_if(m, "seed", cfg.model.seed);
    }
    // the tokenizer vocab and sequence length flow into the model unless
    // overridden explicitly
    if (!j.contains("model") || !j.at("model").contains("vocab_size"))
        cfg.model.vocab_size = cfg.vocab_size;
    if (!j.contains("model") || !j.at("model").contains("max_seq_len"))
        cfg.model.max_seq_len = cfg.seq_len;

    if (j.contains("variant")) {
        const json& v = j.at("variant");
        check_keys(v, {"variant", "grad_mode", "lambda", "mask_rate"}, "variant");
        std::string name = to_string(cfg.variant.variant), mode = to_string(cfg.variant.grad_mode);
        get_if(v, "variant", name);
        get_if(v, "grad_mode", mode);
        cfg.variant.variant = variant_from_string(name);
        cfg.variant.grad_mode = grad_mode_from_string(mode);
        get_if(v, "lambda", cfg.variant.lambda);
        get_if(v, "mask_rate", cfg.variant.mask_rate);
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t,
                   {"epochs", "steps", "batch_size", "lr", "warmup_frac", "clip", "log_every",
                    "ckpt_every", "val_samples"},
                   "train");
        get_if(t, "epochs", cfg.train.epochs);
        get_if(t, "steps", cfg.train.steps);
        get_if(t, "batch_size", cfg.train.batch_size);
        get_if(t, "lr", cfg.train.lr);
        get_if(t, "warmup_frac", cfg.train.warmup_frac);
        get_if(t, "clip", cfg.train.clip);
        get_if(t, "log_every", cfg.train.log_every);
        get_if(t, "ckpt_every", cfg.train.ckpt_every);
        get_if(t, "val_samples", cfg.train.val_samples);
    }

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, {"inversion_samples", "beam", "k_frac", "forward_samples", "readout_samples"},
                   "eval");
        get_if(e, "inversion_samples", cfg.eval.inversion_samples);
        get_if(e, "beam", cfg.eval.beam);
        get_if(e, "k_frac", cfg.eval.k_frac);
        get_if(e, "forward_samples", cfg.eval.forward_samples);
        get_if(e, "readout_samples", cfg.eval.readout_samples);
    }

    if (j.contains("gcg")) {
        const json& g = j.at("gcg");
        check_keys(g,
                   {"prefix_len", "max_iters", "patience", "top_k", "batch", "sample_frac",
                    "max_samples", "x_len", "y_len", "curve_every"},
                   "gcg");
        get_if(g, "prefix_len", cfg.gcg.attack.prefix_len);
        get_if(g, "max_iters", cfg.gcg.attack.max_iters);
        get_if(g, "patience", cfg.gcg.attack.patience);
        get_if(g, "top_k", cfg.gcg.attack.top_k);
        get_if(g, "batch", cfg.gcg.attack.batch);
        get_if(g, "sample_frac", cfg.gcg.sample_frac);
        get_if(g, "max_samples", cfg.gcg.max_samples);
        get_if(g, "x_len", cfg.gcg.x_len);
        get_if(g, "y_len", cfg.gcg.y_len);
        get_if(g, "curve_every", cfg.gcg.curve_every);
    }

    if (j.contains("pag")) {
        const json& p = j.at("pag");
        check_keys(p, {"lambda", "alpha_grid", "per_class", "epochs", "batch_size", "lr"}, "pag");
        get_if(p, "lambda", cfg.pag.lambda);
        get_if(p, "alpha_grid", cfg.pag.alpha_grid);
        get_if(p, "per_class", cfg.pag.per_class);
        get_if(p, "epochs", cfg.pag.epochs);
        get_if(p, "batch_size", cfg.pag.batch_size);
        get_if(p, "lr", cfg.pag.lr);
    }

    if (j.contains("seeds")) {
        const json& s = j.at("seeds");
        check_keys(s, {"data", "model", "train", "eval", "attack", "pag", "reference"}, "seeds");
        get_if(s, "data", cfg.seeds.data);
        get_if(s, "model", cfg.seeds.model);
        get_if(s, "train", cfg.seeds.train);
        get_if(s, "eval", cfg.seeds.eval);
        get_if(s, "attack", cfg.seeds.attack);
        get_if(s, "pag", cfg.seeds.pag);
        get_if(s, "reference", cfg.seeds.reference);
    }

    cfg.model.seed = cfg.seeds.model;
    return cfg;
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    json j;
    j["out_dir"] = cfg.out_dir;
    j["corpus"] = cfg.corpus;
    j["tokenizer"] = cfg.tokenizer;
    j["vocab_size"] = cfg.vocab_size;
    j["seq_len"] = cfg.seq_len;
    j["overlap"] = cfg.overlap;
    j["train_frac"] = cfg.train_frac;
    j["val_frac"] = cfg.val_frac;
    j["reference_frac"] = cfg.reference_frac;
    j["model"] = {{"n_layers", cfg.model.n_layers},     {"d_model", cfg.model.d_model},
                  {"n_heads", cfg.model.n_heads},       {"d_ff", cfg.model.d_ff},
                  {"vocab_size", cfg.model.vocab_size}, {"max_seq_len", cfg.model.max_seq_len},
                  {"ln_eps", cfg.model.ln_eps},         {"seed", cfg.model.seed}};
    j["variant"] = {{"variant", to_string(cfg.variant.variant)},
                    {"grad_mode", to_string(cfg.variant.grad_mode)},
                    {"lambda", cfg.variant.lambda},
                    {"mask_rate", cfg.variant.mask_rate}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"steps", cfg.train.steps},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr},
                  {"warmup_frac", cfg.train.warmup_frac},
                  {"clip", cfg.train.clip},
                  {"log_every", cfg.train.log_every},
                  {"ckpt_every", cfg.train.ckpt_every},
                  {"val_samples", cfg.train.val_samples}};
    j["eval"] = {{"inversion_samples", cfg.eval.inversion_samples},
                 {"beam", cfg.eval.beam},
                 {"k_frac", cfg.eval.k_frac},
                 {"forward_samples", cfg.eval.forward_samples},
                 {"readout_samples", cfg.eval.readout_samples}};
    j["gcg"] = {{"prefix_len", cfg.gcg.attack.prefix_len},
                {"max_iters", cfg.gcg.attack.max_iters},
                {"patience", cfg.gcg.attack.patience},
                {"top_k", cfg.gcg.attack.top_k},
                {"batch", cfg.gcg.attack.batch},
                {"sample_frac", cfg.gcg.sample_frac},
                {"max_samples", cfg.gcg.max_samples},
                {"x_len", cfg.gcg.x_len},
                {"y_len", cfg.gcg.y_len},
                {"curve_every", cfg.gcg.curve_every}};
    j["pag"] = {{"lambda", cfg.pag.lambda},   {"alpha_grid", cfg.pag.alpha_grid},
                {"per_class", cfg.pag.per_class}, {"epochs", cfg.pag.epochs},
                {"batch_size", cfg.pag.batch_size}, {"lr", cfg.pag.lr}};
    j["seeds"] = {{"data", cfg.seeds.data},     {"model", cfg.seeds.model},
                  {"train", cfg.seeds.train},   {"eval", cfg.seeds.eval},
                  {"attack", cfg.seeds.attack}, {"pag", cfg.seeds.pag},
                  {"reference", cfg.seeds.reference}};

    std::ofstream f(path, std::ios::binary);
    if (!f) fail("config: cannot write " + path);
    f << j.dump(2) << "\n";
}

std::vector<IlmVariantSpec> matrix_variants(const IlmVariantSpec& base) {
    std::vector<IlmVariantSpec> out;
    IlmVariantSpec b = base;
    b.variant = Variant::baseline;
    out.push_back(b);
    for (Variant v : {Variant::identity, Variant::bert_like, Variant::inv_first})
        for (GradMode m : {GradMode::value, GradMode::direction}) {
            IlmVariantSpec s = base;
            s.variant = v;
            s.grad_mode = m;
            out.push_back(s);
        }
    return out;
}

}  // namespace ilm

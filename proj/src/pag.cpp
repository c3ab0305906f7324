// SPDX-License-Identifier: Apache-2.0
#include "ilm/pag.hpp"

#include "ilm/textgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ilm {

void HiddenDataset::validate(int classes) const {
    if (static_cast<int>(by_class.size()) != classes) fail("HiddenDataset: class index mismatch");
    for (int c = 0; c < classes; ++c)
        if (by_class[c].size() < 2)
            fail("HiddenDataset: class " + std::to_string(c) + " needs at least 2 samples");
}

Classifier init_classifier(int dim, int classes, std::uint64_t seed) {
    if (dim < 1 || classes < 2) fail("init_classifier: bad dimensions");
    auto rng = make_rng(seed, 0xc1a55);
    std::normal_distribution<double> dist(0.0, 0.05);
    auto normal = [&](Index r, Index c) {
        Mat<float> m(r, c);
        for (Index i = 0; i < r; ++i)
            for (Index j = 0; j < c; ++j) m(i, j) = static_cast<float>(dist(rng));
        return Tensor<float>(std::move(m));
    };
    Classifier clf;
    clf.classes = classes;
    clf.w1 = normal(dim, 2 * dim);
    clf.b1 = Tensor<float>::zeros(1, 2 * dim);
    clf.w2 = normal(2 * dim, classes);
    clf.b2 = Tensor<float>::zeros(1, classes);
    return clf;
}

Tensor<float> classifier_logits(Classifier& clf, const Tensor<float>& h) {
    Index n = h.rows();
    Tensor<float> a = gelu(add(matmul(h, clf.w1), broadcast_rows(clf.b1, n)));
    return add(matmul(a, clf.w2), broadcast_rows(clf.b2, n));
}

Mat<float> proxy(const HiddenDataset& ds, int sample_index, int class_c, ProxyMode mode,
                 std::mt19937_64& rng) {
    if (mode == ProxyMode::identity) return ds.h[sample_index];
    if (mode != ProxyMode::pag) fail("proxy: no proxy direction for mode none");
    if (class_c < 0 || class_c >= static_cast<int>(ds.by_class.size()))
        fail("proxy: class out of range");
    const auto& pool = ds.by_class[class_c];
    if (pool.empty()) fail("proxy: class " + std::to_string(class_c) + " is empty");

    int pick = sample_index;
    int guard = 0;
    do {
        pick = pool[rng() % pool.size()];
        if (++guard > 1000) fail("proxy: cannot sample a distinct class member");
    } while (pick == sample_index);
    return ds.h[pick] - ds.h[sample_index];
}

PagLossResult pag_loss(Classifier& clf, const HiddenDataset& ds, int sample_index,
                       const PagConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const Mat<float>& h_val = ds.h[sample_index];
    const int label = ds.y[sample_index];

    Tensor<float> h(h_val);
    Tensor<float> logits = classifier_logits(clf, h);
    Tensor<float> ce = cross_entropy(logits, {label});

    PagLossResult out;
    out.ce = static_cast<double>(ce.item());
    if (cfg.proxy == ProxyMode::none || cfg.lambda == 0.0) {
        out.loss = ce;
        return out;
    }

    Tensor<float> penalty;
    for (int c = 0; c < cfg.classes; ++c) {
        Tensor<float> logit_c = pick(logits, {c});
        Tensor<float> g = grad(logit_c, {h}, /*create_graph=*/true)[0];
        Mat<float> p = proxy(ds, sample_index, c, cfg.proxy, rng);

        Tensor<float> term;
        if (g.value().norm() == 0.0f || p.norm() == 0.0f) {
            // cosine undefined; the term contributes as if orthogonal
            term = Tensor<float>::ones(1, 1);
            ++out.degenerate_terms;
        } else {
            term = sub(Tensor<float>::ones(1, 1), cosine_similarity(g, Tensor<float>(p)));
        }
        penalty = penalty.defined() ? add(penalty, term) : term;
    }
    penalty = scalar_mul(penalty, 1.0f / static_cast<float>(cfg.classes));
    out.pag_term = static_cast<double>(penalty.item());
    out.loss = add(ce, scalar_mul(penalty, static_cast<float>(cfg.lambda)));
    return out;
}

Mat<float> fgsm(Classifier& clf, const Mat<float>& h, int label, float alpha) {
    Tensor<float> ht(h);
    Tensor<float> loss = cross_entropy(classifier_logits(clf, ht), {label});
    Tensor<float> g = grad(loss, {ht})[0];
    NoGradGuard ng;
    return h + alpha * g.value().array().sign().matrix();
}

void train_classifier(Classifier& clf, const HiddenDataset& ds, const PagConfig& cfg,
                      const PagTrainOptions& opt) {
    cfg.validate();
    ds.validate(cfg.classes);
    AdamState adam;
    adam_init(adam, clf.params());
    auto params = clf.params();

    std::vector<int> order(ds.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        auto shuffle_rng = make_rng(opt.seed, 0x5a9 + static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (size_t start = 0; start < order.size(); start += opt.batch_size) {
            size_t end = std::min(order.size(), start + opt.batch_size);
            const int b = static_cast<int>(end - start);

            std::vector<std::vector<Mat<float>>> element_grads(b);
            parallel_for(b, [&](int j) {
                auto rng = make_rng(opt.seed ^ 0x9a6, static_cast<std::uint64_t>(epoch) * 1000003 +
                                                          start + static_cast<std::uint64_t>(j));
                auto res = pag_loss(clf, ds, order[start + j], cfg, rng);
                std::vector<Tensor<float>> wrt;
                for (auto* t : params) wrt.push_back(*t);
                auto gs = grad(res.loss, wrt);
                for (auto& g : gs) element_grads[j].push_back(g.value());
            });

            std::vector<Mat<float>> grads;
            for (size_t k = 0; k < params.size(); ++k)
                grads.push_back(Mat<float>::Zero(params[k]->rows(), params[k]->cols()));
            const float inv_b = 1.0f / static_cast<float>(b);
            for (int j = 0; j < b; ++j)
                for (size_t k = 0; k < params.size(); ++k) grads[k] += element_grads[j][k] * inv_b;
            clip_global_norm(grads, 1.0);
            adam_step(params, adam, grads, opt.adam, opt.adam.lr);
        }
    }
}

namespace {

int predict(Classifier& clf, const Mat<float>& h) {
    NoGradGuard ng;
    Mat<float> z = classifier_logits(clf, Tensor<float>(h)).value();
    int best = 0;
    for (Index j = 1; j < z.cols(); ++j)
        if (z(0, j) > z(0, best)) best = static_cast<int>(j);
    return best;
}

}  // namespace

double clean_accuracy(Classifier& clf, const HiddenDataset& ds) {
    std::vector<char> hits(ds.size(), 0);
    parallel_for(static_cast<int>(ds.size()),
                 [&](int i) { hits[i] = predict(clf, ds.h[i]) == ds.y[i] ? 1 : 0; });
    double total = 0;
    for (char h : hits) total += h;
    return total / static_cast<double>(ds.size());
}

double attacked_accuracy(Classifier& clf, const HiddenDataset& ds, float alpha) {
    std::vector<char> hits(ds.size(), 0);
    parallel_for(static_cast<int>(ds.size()), [&](int i) {
        Mat<float> adv = fgsm(clf, ds.h[i], ds.y[i], alpha);
        hits[i] = predict(clf, adv) == ds.y[i] ? 1 : 0;
    });
    double total = 0;
    for (char h : hits) total += h;
    return total / static_cast<double>(ds.size());
}

std::vector<RobustnessRow> robust_eval(std::vector<std::pair<std::string, Classifier*>> models,
                                       const HiddenDataset& ds,
                                       const std::vector<double>& alpha_grid) {
    std::vector<RobustnessRow> rows;
    for (auto& [name, clf] : models) {
        double clean = clean_accuracy(*clf, ds);
        for (double alpha : alpha_grid) {
            RobustnessRow r;
            r.proxy_mode = name;
            r.alpha = alpha;
            r.clean_acc = clean;
            r.attacked_acc = attacked_accuracy(*clf, ds, static_cast<float>(alpha));
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

HiddenDataset build_hidden_dataset(ModelParams<float>& encoder, const Tokenizer& tok,
                                   int per_class, std::uint64_t seed) {
    HiddenDataset ds;
    ds.dim = encoder.config.d_model;
    ds.by_class.resize(textgen::kNumTopics);
    auto rng = make_rng(seed, 0x41dde);

    struct Job {
        std::string text;
        int label;
    };
    std::vector<Job> jobs;
    for (int c = 0; c < textgen::kNumTopics; ++c)
        for (int i = 0; i < per_class; ++i) jobs.push_back({textgen::topic_sentence(c, rng), c});

    ds.h.resize(jobs.size());
    ds.y.resize(jobs.size());
    parallel_for(static_cast<int>(jobs.size()), [&](int i) {
        std::vector<int> ids = tok.encode(jobs[i].text);
        if (static_cast<int>(ids.size()) > encoder.config.max_seq_len)
            ids.resize(encoder.config.max_seq_len);
        if (ids.empty()) ids.push_back(tok.pad_id());
        NoGradGuard ng;
        auto trace = forward(encoder, ids);
        ds.h[i] = trace.normed_hidden.value().row(trace.normed_hidden.rows() - 1);
        ds.y[i] = jobs[i].label;
    });
    for (size_t i = 0; i < jobs.size(); ++i) ds.by_class[ds.y[i]].push_back(static_cast<int>(i));
    return ds;
}

}  // namespace ilm

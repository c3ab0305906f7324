// SPDX-License-Identifier: Apache-2.0
//
// Toy classification study: an MLP head over frozen transformer hidden
// states, trained with a cosine regularizer that aligns per-class input
// gradients with proxy directions, then stress-tested with FGSM.

#pragma once

#include "ilm/model.hpp"
#include "ilm/optimizer.hpp"
#include "ilm/tokenizer.hpp"

#include <vector>

namespace ilm {

enum class ProxyMode { none, pag, identity };

inline const char* to_string(ProxyMode m) {
    switch (m) {
        case ProxyMode::none: return "none";
        case ProxyMode::pag: return "pag";
        case ProxyMode::identity: return "identity";
    }
    return "?";
}

struct PagConfig {
    int classes = 6;
    double lambda = 1.0;       // weight of the alignment term; 0 with ProxyMode::none
    ProxyMode proxy = ProxyMode::pag;
    double fgsm_alpha = 0.1;
    std::uint64_t seed = 1;

    void validate() const {
        if (classes < 2) fail("PagConfig: need at least 2 classes");
        if (fgsm_alpha <= 0.0) fail("PagConfig: fgsm_alpha must be > 0");
        if (lambda < 0.0) fail("PagConfig: lambda must be >= 0");
    }
};

/// Frozen-encoder features: (hidden vector, class label) pairs with a
/// per-class index for proxy sampling.
struct HiddenDataset {
    int dim = 0;
    std::vector<Mat<float>> h;  // 1 x dim rows
    std::vector<int> y;
    std::vector<std::vector<int>> by_class;

    size_t size() const { return h.size(); }
    void validate(int classes) const;
};

/// Two-layer MLP head, width 2 * input dim.
struct Classifier {
    Tensor<float> w1, b1, w2, b2;
    int classes = 0;

    std::vector<Tensor<float>*> params() { return {&w1, &b1, &w2, &b2}; }
};

Classifier init_classifier(int dim, int classes, std::uint64_t seed);

/// Pre-softmax class logits (1 x C) for a graph-tracked hidden vector.
Tensor<float> classifier_logits(Classifier& clf, const Tensor<float>& h);

/// Proxy target direction for one class term: u_c - h_x (PAG, with u_c drawn
/// from class c excluding the sample itself) or h_x (identity).
Mat<float> proxy(const HiddenDataset& ds, int sample_index, int class_c, ProxyMode mode,
                 std::mt19937_64& rng);

struct PagLossResult {
    Tensor<float> loss;
    double ce = 0.0;
    double pag_term = 0.0;      // mean over classes of 1 - cos
    int degenerate_terms = 0;   // zero-norm gradient or proxy, counted as orthogonal
};

/// CE + lambda * (1/C) * sum_c [1 - cos(grad_h logit_c, proxy_c)], with the
/// class gradients taken on pre-softmax logits and kept differentiable.
PagLossResult pag_loss(Classifier& clf, const HiddenDataset& ds, int sample_index,
                       const PagConfig& cfg, std::mt19937_64& rng);

/// h + alpha * sign(grad_h CE(f(h), y)).
Mat<float> fgsm(Classifier& clf, const Mat<float>& h, int label, float alpha);

struct PagTrainOptions {
    int epochs = 8;
    int batch_size = 16;
    AdamConfig adam{.lr = 1e-3};
    std::uint64_t seed = 3;
};

void train_classifier(Classifier& clf, const HiddenDataset& ds, const PagConfig& cfg,
                      const PagTrainOptions& opt);

double clean_accuracy(Classifier& clf, const HiddenDataset& ds);
double attacked_accuracy(Classifier& clf, const HiddenDataset& ds, float alpha);

struct RobustnessRow {
    std::string proxy_mode;
    double alpha = 0.0;
    double clean_acc = 0.0;
    double attacked_acc = 0.0;
};

/// Clean and under-attack accuracy for each trained classifier at each alpha.
std::vector<RobustnessRow> robust_eval(std::vector<std::pair<std::string, Classifier*>> models,
                                       const HiddenDataset& ds,
                                       const std::vector<double>& alpha_grid);

/// Final-position hidden states of the (frozen) transformer over
/// template-generated topic sentences, one class per topic.
HiddenDataset build_hidden_dataset(ModelParams<float>& encoder, const Tokenizer& tok,
                                   int per_class, std::uint64_t seed);

}  // namespace ilm

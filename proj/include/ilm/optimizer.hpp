// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ilm/model.hpp"

#include <cmath>
#include <vector>

namespace ilm {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Mat<float>> m, v;
    long long t = 0;
};

inline std::vector<Tensor<float>*> tensor_ptrs(ModelParams<float>& p) {
    std::vector<Tensor<float>*> out;
    for (auto& [name, t] : p.named_tensors()) out.push_back(t);
    return out;
}

inline void adam_init(AdamState& st, const std::vector<Tensor<float>*>& params) {
    st.m.clear();
    st.v.clear();
    st.t = 0;
    for (const auto* t : params) {
        st.m.push_back(Mat<float>::Zero(t->rows(), t->cols()));
        st.v.push_back(Mat<float>::Zero(t->rows(), t->cols()));
    }
}

inline void adam_init(AdamState& st, ModelParams<float>& p) { adam_init(st, tensor_ptrs(p)); }

/// Returns the pre-clip global norm; grads are scaled in place if needed.
inline double clip_global_norm(std::vector<Mat<float>>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) sq += static_cast<double>(g.template cast<double>().squaredNorm());
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        float scale = static_cast<float>(max_norm / norm);
        for (auto& g : grads) g *= scale;
    }
    return norm;
}

inline void adam_step(const std::vector<Tensor<float>*>& params, AdamState& st,
                      const std::vector<Mat<float>>& grads, const AdamConfig& cfg, double lr_now) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        fail("adam_step: state/gradient count mismatch");
    st.t += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
    for (size_t k = 0; k < params.size(); ++k) {
        Mat<float>& m = st.m[k];
        Mat<float>& v = st.v[k];
        const Mat<float>& g = grads[k];
        m = static_cast<float>(b1) * m + static_cast<float>(1.0 - b1) * g;
        v = static_cast<float>(b2) * v + static_cast<float>(1.0 - b2) * g.cwiseProduct(g);
        Mat<float> update =
            (m / static_cast<float>(bc1)).array() /
            ((v / static_cast<float>(bc2)).array().sqrt() + static_cast<float>(cfg.eps));
        params[k]->mutable_value() -= static_cast<float>(lr_now) * update.matrix();
    }
}

inline void adam_step(ModelParams<float>& p, AdamState& st, const std::vector<Mat<float>>& grads,
                      const AdamConfig& cfg, double lr_now) {
    adam_step(tensor_ptrs(p), st, grads, cfg, lr_now);
}

}  // namespace ilm

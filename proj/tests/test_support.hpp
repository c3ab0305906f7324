// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the gradient checks: a random composition generator
// over the op catalog and the relative-error measure used against the
// finite-difference oracle.

#pragma once

#include "ilm/tensor.hpp"

#include <functional>
#include <random>
#include <vector>

namespace ilm_test {

using D = ilm::Tensor<double>;

inline ilm::Mat<double> randm(std::mt19937_64& rng, int r, int c, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    ilm::Mat<double> m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = dist(rng);
    return m;
}

inline double rel_err(const ilm::Mat<double>& a, const ilm::Mat<double>& b) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            double denom = std::max({1.0, std::abs(a(i, j)), std::abs(b(i, j))});
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / denom);
        }
    return worst;
}

// Random compositions of catalog ops over a handful of leaves, reduced to a
// scalar. Positivity is tracked so log/sqrt/div stay well away from their
// singularities and finite differences stay clean.
struct RandomGraph {
    std::vector<D> leaves;
    std::function<D(const std::vector<D>&)> eval;
};

inline RandomGraph make_random_graph(std::uint64_t seed) {
    std::mt19937_64 rng(seed);

    const int n_leaves = 2 + static_cast<int>(rng() % 2);
    std::vector<std::pair<int, int>> shapes = {{2, 3}, {3, 3}, {3, 2}, {2, 2}};
    std::vector<D> leaves;
    for (int i = 0; i < n_leaves; ++i) {
        auto [r, c] = shapes[rng() % shapes.size()];
        leaves.push_back(D(randm(rng, r, c, 0.2, 1.4)));
    }
    const int n_ops = 3 + static_cast<int>(rng() % 3);
    const std::uint64_t plan_seed = rng();

    auto eval = [n_ops, plan_seed](const std::vector<D>& xs) -> D {
        std::mt19937_64 plan(plan_seed);
        struct Entry {
            D t;
            bool positive;
        };
        std::vector<Entry> pool;
        for (const auto& x : xs) pool.push_back({x, true});

        auto pick_any = [&](std::uint64_t r) -> Entry& { return pool[r % pool.size()]; };

        for (int step = 0; step < n_ops; ++step) {
            int choice = static_cast<int>(plan() % 9);
            Entry& a = pick_any(plan());
            switch (choice) {
                case 0: {  // same-shape binary
                    std::vector<int> mates;
                    for (size_t i = 0; i < pool.size(); ++i)
                        if (pool[i].t.rows() == a.t.rows() && pool[i].t.cols() == a.t.cols())
                            mates.push_back(static_cast<int>(i));
                    Entry& b = pool[mates[plan() % mates.size()]];
                    switch (plan() % 4) {
                        case 0:
                            pool.push_back({ilm::add(a.t, b.t), a.positive && b.positive});
                            break;
                        case 1: pool.push_back({ilm::sub(a.t, b.t), false}); break;
                        case 2:
                            pool.push_back({ilm::mul(a.t, b.t), a.positive && b.positive});
                            break;
                        default:
                            if (b.positive)
                                pool.push_back({ilm::div(a.t, b.t), a.positive});
                            else
                                pool.push_back({ilm::mul(a.t, b.t), false});
                    }
                    break;
                }
                case 1: {  // matmul with a compatible pool member
                    std::vector<int> mates;
                    for (size_t i = 0; i < pool.size(); ++i)
                        if (pool[i].t.rows() == a.t.cols()) mates.push_back(static_cast<int>(i));
                    if (mates.empty()) {
                        pool.push_back({ilm::transpose(a.t), a.positive});
                    } else {
                        Entry& b = pool[mates[plan() % mates.size()]];
                        pool.push_back({ilm::matmul(a.t, b.t), false});
                    }
                    break;
                }
                case 2: pool.push_back({ilm::exp(ilm::scalar_mul(a.t, 0.5)), true}); break;
                case 3:
                    if (a.positive) pool.push_back({ilm::log(a.t), false});
                    else pool.push_back({ilm::tanh(a.t), false});
                    break;
                case 4:
                    if (a.positive) pool.push_back({ilm::sqrt(a.t), true});
                    else pool.push_back({ilm::gelu(a.t), false});
                    break;
                case 5: pool.push_back({ilm::softmax(a.t, 1), true}); break;
                case 6: pool.push_back({ilm::layer_norm(a.t, 1e-3), false}); break;
                case 7: pool.push_back({ilm::scalar_mul(a.t, -0.7), false}); break;
                default: pool.push_back({ilm::transpose(a.t), a.positive}); break;
            }
        }

        Entry& last = pool.back();
        switch (plan() % 3) {
            case 0: return ilm::mean(last.t);
            case 1: return ilm::sum(ilm::mul(last.t, last.t));
            default: {
                std::vector<int> targets(last.t.rows());
                for (auto& t : targets) t = static_cast<int>(plan() % last.t.cols());
                return ilm::cross_entropy(last.t, targets);
            }
        }
    };

    return {leaves, eval};
}

}  // namespace ilm_test
